#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchfuse/backbone.hpp"
#include "sketchfuse/config.hpp"
#include "sketchfuse/heads.hpp"
#include "sketchfuse/image.hpp"

namespace sketchfuse {

// Directory layout:
//   <root>/<split>/<class>/photos/<id>.<img>
//   <root>/<split>/<class>/sketches/<id>.<img>
//   <root>/<split>/<class>/masks/<id>.<img>          (segmentation)
//   <root>/<split>/keypoints.txt                     (correspondence)
//   <root>/splits/<split>.txt                        (optional class manifest)
// Fine-grained pairing: sketch stem equals the photo stem, or the photo stem
// plus one trailing "_<suffix>".

struct PhotoRecord {
    std::string class_name;
    std::string id; // "<class>/<stem>"
    std::string path;
    int label = -1;
    std::string mask_path; // empty unless provided
};

struct SketchRecord {
    std::string class_name;
    std::string id;
    std::string path;
    int label = -1;
    int paired_photo = -1; // index into photos, -1 if unpaired
};

struct Dataset {
    std::string split;
    std::vector<std::string> classes;
    std::vector<PhotoRecord> photos;
    std::vector<SketchRecord> sketches;
    std::vector<CorrespondenceAnnotation> annotations;
    std::vector<std::vector<int>> photos_by_class;

    int find_photo(const std::string& id) const {
        for (std::size_t i = 0; i < photos.size(); ++i)
            if (photos[i].id == id) return static_cast<int>(i);
        return -1;
    }
    int find_sketch(const std::string& id) const {
        for (std::size_t i = 0; i < sketches.size(); ++i)
            if (sketches[i].id == id) return static_cast<int>(i);
        return -1;
    }
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

inline std::vector<std::filesystem::path> sorted_images(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::exists(dir)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string strip_last_suffix(const std::string& stem) {
    const auto us = stem.find_last_of('_');
    return us == std::string::npos ? stem : stem.substr(0, us);
}

} // namespace detail

inline DTensor load_mask_image(const std::string& path) {
    DTensor img = read_image(path);
    if (img.dim(2) != 1)
        throw std::runtime_error("mask must be single-channel: " + path);
    DTensor mask({img.dim(0), img.dim(1)});
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        const double v = img.at(i);
        if (v != 0.0 && v != 1.0)
            throw std::runtime_error("mask has non-binary pixel values: " + path);
        mask.at(i) = v;
    }
    return mask;
}

inline ImageBatch load_image_batch(const std::string& path, int image_size) {
    DTensor img = to_rgb(read_image(path));
    DTensor batched = img.reshaped({1, img.dim(0), img.dim(1), 3});
    if (img.dim(0) != image_size || img.dim(1) != image_size)
        batched = bilinear_resize(batched, image_size, image_size);
    ImageBatch out{std::move(batched)};
    out.validate();
    return out;
}

inline Dataset load_dataset(const std::string& root, const std::string& split, Task task,
                            int image_size) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(root) / split;
    if (!fs::exists(base))
        throw std::runtime_error("dataset: missing split directory " + base.string());

    Dataset ds;
    ds.split = split;

    // class list, optionally filtered by the split manifest
    std::set<std::string> manifest;
    const fs::path manifest_path = fs::path(root) / "splits" / (split + ".txt");
    if (fs::exists(manifest_path)) {
        std::ifstream is(manifest_path);
        std::string line;
        while (std::getline(is, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
            if (!line.empty()) manifest.insert(line);
        }
    }
    for (const auto& e : fs::directory_iterator(base))
        if (e.is_directory()) {
            const std::string name = e.path().filename().string();
            if (!manifest.empty() && manifest.find(name) == manifest.end()) continue;
            ds.classes.push_back(name);
        }
    std::sort(ds.classes.begin(), ds.classes.end());
    if (!manifest.empty())
        for (const auto& m : manifest)
            if (std::find(ds.classes.begin(), ds.classes.end(), m) == ds.classes.end())
                throw std::runtime_error("dataset: manifest class missing on disk: " + m);
    if (ds.classes.empty()) throw std::runtime_error("dataset: no classes under " + base.string());

    ds.photos_by_class.resize(ds.classes.size());
    std::map<std::string, int> photo_by_id;
    for (std::size_t ci = 0; ci < ds.classes.size(); ++ci) {
        const std::string& cls = ds.classes[ci];
        for (const auto& p : detail::sorted_images(base / cls / "photos")) {
            PhotoRecord rec;
            rec.class_name = cls;
            rec.id = cls + "/" + p.stem().string();
            rec.path = p.string();
            rec.label = static_cast<int>(ci);
            const fs::path mask = base / cls / "masks" / (p.stem().string() + p.extension().string());
            if (fs::exists(mask)) rec.mask_path = mask.string();
            photo_by_id[rec.id] = static_cast<int>(ds.photos.size());
            ds.photos_by_class[ci].push_back(static_cast<int>(ds.photos.size()));
            ds.photos.push_back(std::move(rec));
        }
        for (const auto& s : detail::sorted_images(base / cls / "sketches")) {
            SketchRecord rec;
            rec.class_name = cls;
            rec.id = cls + "/" + s.stem().string();
            rec.path = s.string();
            rec.label = static_cast<int>(ci);
            const std::string stem = s.stem().string();
            auto exact = photo_by_id.find(cls + "/" + stem);
            if (exact != photo_by_id.end()) rec.paired_photo = exact->second;
            else {
                auto pref = photo_by_id.find(cls + "/" + detail::strip_last_suffix(stem));
                if (pref != photo_by_id.end()) rec.paired_photo = pref->second;
            }
            ds.sketches.push_back(std::move(rec));
        }
    }
    if (ds.sketches.empty()) throw std::runtime_error("dataset: no sketches under " + base.string());

    const bool needs_pairs = task == Task::fg_sbir || task == Task::correspondence;
    if (needs_pairs)
        for (const auto& s : ds.sketches)
            if (s.paired_photo < 0)
                throw std::runtime_error("dataset: fine-grained sketch without paired photo: " + s.id);

    if (task == Task::segmentation) {
        for (const auto& p : ds.photos)
            if (p.mask_path.empty())
                throw std::runtime_error("dataset: photo without mask annotation: " + p.id);
    }

    if (task == Task::correspondence) {
        const fs::path kp = base / "keypoints.txt";
        if (!fs::exists(kp)) throw std::runtime_error("dataset: missing " + kp.string());
        std::ifstream is(kp);
        std::string line;
        int lineno = 0;
        std::map<std::pair<std::string, std::string>, std::size_t> group;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string sid, pid;
            double xs, ys, xp, yp;
            if (!(ss >> sid >> pid >> xs >> ys >> xp >> yp))
                throw std::runtime_error("dataset: malformed keypoint record at " + kp.string() +
                                         ":" + std::to_string(lineno));
            if (ds.find_sketch(sid) < 0)
                throw std::runtime_error("dataset: keypoint references unknown sketch " + sid);
            if (photo_by_id.find(pid) == photo_by_id.end())
                throw std::runtime_error("dataset: keypoint references unknown photo " + pid);
            auto key = std::make_pair(sid, pid);
            auto it = group.find(key);
            if (it == group.end()) {
                group[key] = ds.annotations.size();
                ds.annotations.push_back(CorrespondenceAnnotation{sid, pid, {}});
                it = group.find(key);
            }
            ds.annotations[it->second].points.push_back(KeypointPair{xs, ys, xp, yp});
        }
        if (ds.annotations.empty())
            throw std::runtime_error("dataset: keypoints.txt has no records");
        for (const auto& a : ds.annotations) a.validate(image_size);
    }

    return ds;
}

} // namespace sketchfuse
