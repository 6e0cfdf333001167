#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "sketchfuse/image.hpp"
#include "sketchfuse/tensor.hpp"

namespace fixtures {

using sketchfuse::DTensor;

inline void fill_rect(DTensor& img, int y0, int x0, int h, int w, double r, double g, double b) {
    for (int i = y0; i < y0 + h; ++i)
        for (int j = x0; j < x0 + w; ++j) {
            if (i < 0 || j < 0 || i >= img.dim(0) || j >= img.dim(1)) continue;
            img(i, j, 0) = r;
            img(i, j, 1) = g;
            img(i, j, 2) = b;
        }
}

inline void outline_rect(DTensor& img, int y0, int x0, int h, int w, double r, double g, double b,
                         int thickness = 2) {
    fill_rect(img, y0, x0, thickness, w, r, g, b);
    fill_rect(img, y0 + h - thickness, x0, thickness, w, r, g, b);
    fill_rect(img, y0, x0, h, thickness, r, g, b);
    fill_rect(img, y0, x0 + w - thickness, h, thickness, r, g, b);
}

// Photo: class-tinted background with a filled square at an instance-specific
// position. Sketch: pale tinted background, dark outline square with a faint
// fill at the same spot. Square geometry drives masks, tint drives the class,
// position drives the instance.
struct ClassificationFixture {
    std::string root;
    int classes = 3;
    int photos_per_class = 4;
    int sketches_per_photo = 2;
    int image_size = 64;
    double box_fraction = 0.375;
    bool with_masks = false;
    bool instance_colored_squares = true; // false: one square colour per class
    std::vector<std::string> splits = {"train"};
};

inline std::array<double, 3> class_tint(int cls) {
    auto frac = [](double v) { return v - std::floor(v); };
    return {0.15 + 0.7 * frac(0.6180339887 * (cls + 1)),
            0.15 + 0.7 * frac(0.7548776662 * (cls + 1)),
            0.15 + 0.7 * frac(0.5698402910 * (cls + 1))};
}

inline std::array<double, 3> instance_tint(int cls, int inst) {
    auto frac = [](double v) { return v - std::floor(v); };
    return {0.25 + 0.7 * frac(0.6180339887 * (inst + 1) + 0.371 * cls),
            0.25 + 0.7 * frac(0.7548776662 * (inst + 2) + 0.173 * cls),
            0.25 + 0.7 * frac(0.5698402910 * (inst + 3) + 0.629 * cls)};
}

inline std::array<int, 4> square_geometry(int cls, int inst, int image_size, double box_fraction) {
    const int box = static_cast<int>(image_size * box_fraction);
    const int span = std::max(1, image_size - box - 8);
    auto frac = [](double v) { return v - std::floor(v); };
    const int y = 4 + static_cast<int>(span * frac(0.6180339887 * (cls * 17 + inst * 5 + 1)));
    const int x = 4 + static_cast<int>(span * frac(0.7548776662 * (cls * 11 + inst * 7 + 1)));
    return {y, x, box, box};
}

inline void write_classification_fixture(const ClassificationFixture& f) {
    namespace fs = std::filesystem;
    for (const auto& split : f.splits) {
        for (int c = 0; c < f.classes; ++c) {
            const std::string cls = "class" + std::to_string(c);
            const fs::path base = fs::path(f.root) / split / cls;
            fs::create_directories(base / "photos");
            fs::create_directories(base / "sketches");
            if (f.with_masks) fs::create_directories(base / "masks");
            const auto tint = class_tint(c);
            for (int i = 0; i < f.photos_per_class; ++i) {
                const auto geo = square_geometry(c, i, f.image_size, f.box_fraction);
                const std::string stem = "item" + std::to_string(i);
                const auto inst = f.instance_colored_squares ? instance_tint(c, i)
                                                             : instance_tint(c, 0);
                DTensor photo({f.image_size, f.image_size, 3});
                fill_rect(photo, 0, 0, f.image_size, f.image_size, tint[0], tint[1], tint[2]);
                fill_rect(photo, geo[0], geo[1], geo[2], geo[3], inst[0], inst[1], inst[2]);
                sketchfuse::write_png((base / "photos" / (stem + ".png")).string(), photo);
                if (f.with_masks) {
                    DTensor mask({f.image_size, f.image_size, 1});
                    for (int y = geo[0]; y < geo[0] + geo[2]; ++y)
                        for (int x = geo[1]; x < geo[1] + geo[3]; ++x) mask(y, x, 0) = 1.0;
                    sketchfuse::write_png((base / "masks" / (stem + ".png")).string(), mask);
                }
                for (int s = 0; s < f.sketches_per_photo; ++s) {
                    DTensor sketch({f.image_size, f.image_size, 3});
                    fill_rect(sketch, 0, 0, f.image_size, f.image_size, 0.7 + 0.3 * tint[0],
                              0.7 + 0.3 * tint[1], 0.7 + 0.3 * tint[2]);
                    fill_rect(sketch, geo[0], geo[1], geo[2], geo[3], 0.35 + 0.5 * inst[0],
                              0.35 + 0.5 * inst[1], 0.35 + 0.5 * inst[2]);
                    outline_rect(sketch, geo[0], geo[1], geo[2], geo[3], 0.2 * inst[0], 0.2 * inst[1],
                                 0.2 * inst[2], 2 + s); // stroke width varies per sketch
                    const std::string name =
                        f.sketches_per_photo == 1 ? stem : stem + "_s" + std::to_string(s);
                    sketchfuse::write_png((base / "sketches" / (name + ".png")).string(), sketch);
                }
            }
        }
    }
}

// Correspondence fixture: photo is the sketch image cyclically shifted right
// by `shift_px`; keypoints sit at cell centres of the 60x60 grid.
struct CorrespondenceFixture {
    std::string root;
    int classes = 2;
    int pairs_per_class = 2;
    int points_per_pair = 6;
    int image_size = 480;
    int shift_px = 8;
    std::vector<std::string> splits = {"train"};
};

inline void write_correspondence_fixture(const CorrespondenceFixture& f) {
    namespace fs = std::filesystem;
    std::mt19937_64 rng(12345);
    for (const auto& split : f.splits) {
        fs::create_directories(fs::path(f.root) / split);
        std::ofstream kp((fs::path(f.root) / split / "keypoints.txt").string());
        for (int c = 0; c < f.classes; ++c) {
            const std::string cls = "class" + std::to_string(c);
            const fs::path base = fs::path(f.root) / split / cls;
            fs::create_directories(base / "photos");
            fs::create_directories(base / "sketches");
            for (int i = 0; i < f.pairs_per_class; ++i) {
                const std::string stem = "item" + std::to_string(i);
                // coordinate-coded cell colours: every grid cell gets a unique,
                // non-repeating signature so matches are unambiguous
                DTensor sketch({f.image_size, f.image_size, 3});
                const int block = f.image_size / 60;
                for (int by = 0; by < 60; ++by)
                    for (int bx = 0; bx < 60; ++bx) {
                        const double r = (bx + 0.5) / 60.0;
                        const double g = (by + 0.5) / 60.0;
                        const double b =
                            0.5 + 0.45 * std::sin(2.39996 * (bx + 60 * by) + 0.7 * c + 1.3 * i);
                        fill_rect(sketch, by * block, bx * block, block, block, r, g, b);
                    }
                DTensor photo({f.image_size, f.image_size, 3});
                for (int y = 0; y < f.image_size; ++y)
                    for (int x = 0; x < f.image_size; ++x)
                        for (int ch = 0; ch < 3; ++ch)
                            photo(y, (x + f.shift_px) % f.image_size, ch) = sketch(y, x, ch);
                sketchfuse::write_png((base / "sketches" / (stem + ".png")).string(), sketch);
                sketchfuse::write_png((base / "photos" / (stem + ".png")).string(), photo);

                const double cell = static_cast<double>(f.image_size) / 60.0;
                for (int p = 0; p < f.points_per_pair; ++p) {
                    const int cx = 3 + static_cast<int>(rng() % 50);
                    const int cy = 3 + static_cast<int>(rng() % 50);
                    const double xs = (cx + 0.5) * cell;
                    const double ys = (cy + 0.5) * cell;
                    const double xp = xs + f.shift_px;
                    const double yp = ys;
                    kp << cls << "/" << stem << " " << cls << "/" << stem << " " << xs << " " << ys
                       << " " << xp << " " << yp << "\n";
                }
            }
        }
    }
}

inline std::string temp_dir(const std::string& name) {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

} // namespace fixtures
