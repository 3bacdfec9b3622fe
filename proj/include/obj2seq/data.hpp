#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "obj2seq/config.hpp"
#include "obj2seq/geometry.hpp"
#include "obj2seq/tensor.hpp"

namespace obj2seq {

struct GroundTruthInstance {
    int class_id = 0;
    BoxCxCyWH box;
    std::optional<KeypointSet> keypoints;
    float area = 0.0f;  // normalized box area
};

struct SceneSample {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row major
    std::vector<GroundTruthInstance> instances;
    std::uint64_t seed = 0;

    std::uint8_t* px(int x, int y) { return pixels.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const std::uint8_t* px(int x, int y) const {
        return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
};

struct SceneSpec {
    Task task = Task::detect;
    int classes = 5;
    int max_instances = 3;
    int max_distinct_classes = 3;  // keeps training retention satisfiable
    int image_size = 64;
    int keypoints = 3;
    float kpt_sigma = 0.1f;

    static SceneSpec from_config(const TrainConfig& c) {
        SceneSpec s;
        s.task = c.task;
        s.classes = c.K;
        s.max_instances = c.max_instances;
        s.max_distinct_classes = std::min(c.K, c.Kprime);
        s.image_size = c.image_size;
        s.keypoints = c.J;
        s.kpt_sigma = c.kpt_sigma;
        return s;
    }
};

namespace detail {

struct Rgb {
    float r, g, b;
};

inline constexpr Rgb kClassColors[5] = {
    {230, 45, 45},   // circle
    {45, 205, 65},   // square
    {55, 95, 235},   // triangle
    {225, 50, 225},  // ring
    {245, 150, 40},  // cross
};

inline void put_pixel(SceneSample& s, int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= s.width || y >= s.height) return;
    auto* p = s.px(x, y);
    p[0] = static_cast<std::uint8_t>(std::clamp(c.r, 0.0f, 255.0f));
    p[1] = static_cast<std::uint8_t>(std::clamp(c.g, 0.0f, 255.0f));
    p[2] = static_cast<std::uint8_t>(std::clamp(c.b, 0.0f, 255.0f));
}

// paint every pixel whose center satisfies `inside`, scanning only the
// normalized-coordinate bounding rect
template <class InsideFn>
void paint_region(SceneSample& s, float x0, float y0, float x1, float y1, Rgb color,
                  InsideFn inside) {
    int px0 = std::max(0, static_cast<int>(std::floor(x0 * s.width)) - 1);
    int py0 = std::max(0, static_cast<int>(std::floor(y0 * s.height)) - 1);
    int px1 = std::min(s.width - 1, static_cast<int>(std::ceil(x1 * s.width)) + 1);
    int py1 = std::min(s.height - 1, static_cast<int>(std::ceil(y1 * s.height)) + 1);
    for (int y = py0; y <= py1; ++y) {
        float ny = (y + 0.5f) / s.height;
        for (int x = px0; x <= px1; ++x) {
            float nx = (x + 0.5f) / s.width;
            if (inside(nx, ny)) put_pixel(s, x, y, color);
        }
    }
}

inline void draw_shape(SceneSample& s, int class_id, const BoxCxCyWH& b, Rgb color) {
    float x0 = b.xc - b.w / 2, x1 = b.xc + b.w / 2;
    float y0 = b.yc - b.h / 2, y1 = b.yc + b.h / 2;
    float rx = b.w / 2, ry = b.h / 2;
    switch (class_id % 5) {
        case 0:  // filled ellipse
            paint_region(s, x0, y0, x1, y1, color, [&](float nx, float ny) {
                float dx = (nx - b.xc) / rx, dy = (ny - b.yc) / ry;
                return dx * dx + dy * dy <= 1.0f;
            });
            break;
        case 1:  // filled rectangle
            paint_region(s, x0, y0, x1, y1, color, [&](float nx, float ny) {
                return nx >= x0 && nx <= x1 && ny >= y0 && ny <= y1;
            });
            break;
        case 2: {  // upward triangle
            paint_region(s, x0, y0, x1, y1, color, [&](float nx, float ny) {
                if (ny < y0 || ny > y1) return false;
                float t = (ny - y0) / (y1 - y0);  // 0 at apex
                float half = t * rx;
                return std::abs(nx - b.xc) <= half;
            });
            break;
        }
        case 3:  // ring
            paint_region(s, x0, y0, x1, y1, color, [&](float nx, float ny) {
                float dx = (nx - b.xc) / rx, dy = (ny - b.yc) / ry;
                float q = dx * dx + dy * dy;
                return q <= 1.0f && q >= 0.3f;
            });
            break;
        case 4:  // plus sign
            paint_region(s, x0, y0, x1, y1, color, [&](float nx, float ny) {
                bool hbar = std::abs(ny - b.yc) <= 0.17f * b.h && nx >= x0 && nx <= x1;
                bool vbar = std::abs(nx - b.xc) <= 0.17f * b.w && ny >= y0 && ny <= y1;
                return hbar || vbar;
            });
            break;
    }
}

inline float dist_point_segment(float px, float py, float ax, float ay, float bx, float by) {
    float vx = bx - ax, vy = by - ay;
    float len2 = vx * vx + vy * vy;
    float t = len2 > 0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0f, 1.0f) : 0.0f;
    float dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// Deterministic procedural scene: colored shapes (detection) or articulated
// three-joint glyphs (pose) on a grayscale noise background. Ground truth
// boxes and keypoints are the exact analytic extents of what is drawn.
inline SceneSample generate_scene(std::uint64_t seed, const SceneSpec& spec) {
    Rng rng(splitmix64(seed ^ 0x5ce9e5c9u));
    SceneSample s;
    s.seed = seed;
    s.width = s.height = spec.image_size;
    s.pixels.assign(static_cast<size_t>(3) * spec.image_size * spec.image_size, 0);

    // background: bilinear value noise, strictly grayscale
    constexpr int kGrid = 5;
    float base = rng.unif(85.0f, 150.0f);
    float grid[kGrid][kGrid];
    for (int gy = 0; gy < kGrid; ++gy)
        for (int gx = 0; gx < kGrid; ++gx) grid[gy][gx] = rng.unif(-24.0f, 24.0f);
    for (int y = 0; y < s.height; ++y) {
        float fy = static_cast<float>(y) / s.height * (kGrid - 1);
        int gy = std::min(kGrid - 2, static_cast<int>(fy));
        float ty = fy - gy;
        for (int x = 0; x < s.width; ++x) {
            float fx = static_cast<float>(x) / s.width * (kGrid - 1);
            int gx = std::min(kGrid - 2, static_cast<int>(fx));
            float tx = fx - gx;
            float v = grid[gy][gx] * (1 - tx) * (1 - ty) + grid[gy][gx + 1] * tx * (1 - ty) +
                      grid[gy + 1][gx] * (1 - tx) * ty + grid[gy + 1][gx + 1] * tx * ty;
            float g = base + v + rng.unif(-6.0f, 6.0f);
            detail::put_pixel(s, x, y, {g, g, g});
        }
    }

    int n = spec.max_instances > 0 ? rng.uniform_int(1, spec.max_instances) : 0;

    // distinct classes capped so every gt class can be retained in training
    std::vector<int> pool(spec.classes);
    for (int i = 0; i < spec.classes; ++i) pool[i] = i;
    for (int i = spec.classes - 1; i > 0; --i)
        std::swap(pool[i], pool[rng.uniform_int(0, i)]);
    int distinct = std::min({spec.classes, spec.max_distinct_classes, std::max(1, n)});
    pool.resize(distinct);

    for (int inst = 0; inst < n; ++inst) {
        int class_id = pool[rng.uniform_int(0, distinct - 1)];
        if (spec.task == Task::detect) {
            BoxCxCyWH box;
            for (int attempt = 0; attempt < 24; ++attempt) {
                box.w = rng.unif(0.18f, 0.42f);
                box.h = rng.unif(0.18f, 0.42f);
                box.xc = rng.unif(box.w / 2 + 0.02f, 1.0f - box.w / 2 - 0.02f);
                box.yc = rng.unif(box.h / 2 + 0.02f, 1.0f - box.h / 2 - 0.02f);
                bool ok = true;
                for (const auto& other : s.instances)
                    ok = ok && iou_giou(box, other.box).iou < 0.25;
                if (ok) break;
            }
            detail::Rgb c = detail::kClassColors[class_id % 5];
            float j = rng.unif(0.85f, 1.1f);
            detail::draw_shape(s, class_id, box, {c.r * j, c.g * j, c.b * j});
            GroundTruthInstance gt;
            gt.class_id = class_id;
            gt.box = box;
            gt.area = box.w * box.h;
            s.instances.push_back(gt);
        } else {
            // three-joint glyph: head disc, center joint, tail disc
            float cx = 0, cy = 0, phi = 0, bend = 0, hl = 0, tl = 0;
            float head_r = 0.045f, joint_r = 0.02f;
            std::array<std::array<float, 2>, 3> kp{};
            BoxCxCyWH box;
            for (int attempt = 0; attempt < 24; ++attempt) {
                cx = rng.unif(0.25f, 0.75f);
                cy = rng.unif(0.25f, 0.75f);
                phi = rng.unif(0.0f, 6.2831853f);
                bend = rng.unif(-0.7f, 0.7f);
                hl = rng.unif(0.10f, 0.18f);
                tl = rng.unif(0.10f, 0.18f);
                kp[0] = {cx + hl * std::cos(phi), cy + hl * std::sin(phi)};
                kp[1] = {cx, cy};
                kp[2] = {cx + tl * std::cos(phi + 3.14159265f + bend),
                         cy + tl * std::sin(phi + 3.14159265f + bend)};
                float x0 = std::min({kp[0][0] - head_r, kp[1][0] - joint_r, kp[2][0] - joint_r});
                float x1 = std::max({kp[0][0] + head_r, kp[1][0] + joint_r, kp[2][0] + joint_r});
                float y0 = std::min({kp[0][1] - head_r, kp[1][1] - joint_r, kp[2][1] - joint_r});
                float y1 = std::max({kp[0][1] + head_r, kp[1][1] + joint_r, kp[2][1] + joint_r});
                box = {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
                bool inside = x0 > 0.01f && y0 > 0.01f && x1 < 0.99f && y1 < 0.99f;
                bool ok = inside;
                for (const auto& other : s.instances)
                    ok = ok && iou_giou(box, other.box).iou < 0.2;
                if (ok) break;
            }
            float body_w = 0.018f;
            detail::Rgb body{40, 170, 170}, head{250, 225, 50}, tail{205, 65, 205};
            detail::paint_region(
                s, box.xc - box.w / 2, box.yc - box.h / 2, box.xc + box.w / 2,
                box.yc + box.h / 2, body, [&](float nx, float ny) {
                    return detail::dist_point_segment(nx, ny, kp[1][0], kp[1][1], kp[0][0],
                                                      kp[0][1]) <= body_w ||
                           detail::dist_point_segment(nx, ny, kp[1][0], kp[1][1], kp[2][0],
                                                      kp[2][1]) <= body_w;
                });
            detail::paint_region(s, kp[2][0] - joint_r, kp[2][1] - joint_r, kp[2][0] + joint_r,
                                 kp[2][1] + joint_r, tail, [&](float nx, float ny) {
                                     float dx = nx - kp[2][0], dy = ny - kp[2][1];
                                     return dx * dx + dy * dy <= joint_r * joint_r;
                                 });
            detail::paint_region(s, kp[0][0] - head_r, kp[0][1] - head_r, kp[0][0] + head_r,
                                 kp[0][1] + head_r, head, [&](float nx, float ny) {
                                     float dx = nx - kp[0][0], dy = ny - kp[0][1];
                                     return dx * dx + dy * dy <= head_r * head_r;
                                 });
            GroundTruthInstance gt;
            gt.class_id = class_id;
            gt.box = box;
            gt.area = box.w * box.h;
            KeypointSet ks;
            for (auto& p : kp) {
                ks.points.push_back(p);
                ks.vis.push_back(Visibility::labeled_visible);
                ks.sigmas.push_back(spec.kpt_sigma);
            }
            gt.keypoints = ks;
            s.instances.push_back(gt);
        }
    }
    return s;
}

inline std::vector<SceneSample> generate_dataset(std::uint64_t base_seed, int count,
                                                 const SceneSpec& spec) {
    std::vector<SceneSample> out(count);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (count > 8)
#endif
    for (int i = 0; i < count; ++i) out[i] = generate_scene(base_seed + i, spec);
    return out;
}

// image tensor [3 x H x W], values in [0,1], not tape-attached
template <class T>
TensorT<T> to_image_tensor(const SceneSample& s) {
    std::vector<T> data(static_cast<size_t>(3) * s.height * s.width);
    const size_t plane = static_cast<size_t>(s.height) * s.width;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            const auto* p = s.px(x, y);
            size_t i = static_cast<size_t>(y) * s.width + x;
            data[i] = T(p[0]) / T(255);
            data[plane + i] = T(p[1]) / T(255);
            data[2 * plane + i] = T(p[2]) / T(255);
        }
    return TensorT<T>::from_data({3, s.height, s.width}, std::move(data));
}

// ---- PPM image io ----

inline void write_ppm(const std::string& path, const SceneSample& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_ppm: cannot open '" + path + "'");
    f << "P6\n" << s.width << " " << s.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(s.pixels.data()),
            static_cast<std::streamsize>(s.pixels.size()));
}

inline SceneSample read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_ppm: cannot open '" + path + "'");
    std::string magic;
    f >> magic;
    if (magic != "P6") throw DataError("read_ppm: '" + path + "' is not a binary P6 file");
    auto next_token = [&]() {
        std::string tok;
        while (f >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(f, rest);
                continue;
            }
            return tok;
        }
        throw DataError("read_ppm: truncated header in '" + path + "'");
    };
    SceneSample s;
    s.width = std::stoi(next_token());
    s.height = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (maxval != 255) throw DataError("read_ppm: unsupported maxval in '" + path + "'");
    f.get();  // single whitespace after header
    s.pixels.resize(static_cast<size_t>(3) * s.width * s.height);
    f.read(reinterpret_cast<char*>(s.pixels.data()),
           static_cast<std::streamsize>(s.pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(s.pixels.size()))
        throw DataError("read_ppm: truncated pixel data in '" + path + "'");
    return s;
}

// ---- COCO-format annotations ----

struct CocoCategory {
    int id = 0;
    std::string name;
};

struct ImportedSample {
    int image_id = 0;
    int width = 0, height = 0;
    std::string file_name;
    std::uint64_t seed = 0;
    std::vector<GroundTruthInstance> instances;
};

struct ImportedDataset {
    std::vector<ImportedSample> samples;
    std::vector<CocoCategory> categories;
    nlohmann::json extra;  // unrecognized top-level fields, preserved verbatim
};

inline nlohmann::json export_coco(const std::vector<SceneSample>& samples,
                                  const std::vector<std::string>& class_names) {
    nlohmann::json root;
    root["images"] = nlohmann::json::array();
    root["annotations"] = nlohmann::json::array();
    root["categories"] = nlohmann::json::array();
    for (size_t k = 0; k < class_names.size(); ++k)
        root["categories"].push_back({{"id", static_cast<int>(k) + 1}, {"name", class_names[k]}});
    int ann_id = 1;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        int image_id = static_cast<int>(i) + 1;
        root["images"].push_back({{"id", image_id},
                                  {"width", s.width},
                                  {"height", s.height},
                                  {"file_name", "scene_" + std::to_string(s.seed) + ".ppm"},
                                  {"seed", s.seed}});
        for (const auto& inst : s.instances) {
            double W = s.width, H = s.height;
            double x = (inst.box.xc - inst.box.w / 2.0) * W;
            double y = (inst.box.yc - inst.box.h / 2.0) * H;
            double w = inst.box.w * W;
            double h = inst.box.h * H;
            nlohmann::json a{{"id", ann_id++},
                             {"image_id", image_id},
                             {"category_id", inst.class_id + 1},
                             {"bbox", {x, y, w, h}},
                             {"area", static_cast<double>(inst.area) * W * H},
                             {"iscrowd", 0}};
            if (inst.keypoints) {
                nlohmann::json flat = nlohmann::json::array();
                int labeled = 0;
                for (size_t j = 0; j < inst.keypoints->size(); ++j) {
                    flat.push_back(inst.keypoints->points[j][0] * W);
                    flat.push_back(inst.keypoints->points[j][1] * H);
                    flat.push_back(static_cast<int>(inst.keypoints->vis[j]));
                    if (inst.keypoints->vis[j] != Visibility::invalid) ++labeled;
                }
                a["keypoints"] = flat;
                a["num_keypoints"] = labeled;
                nlohmann::json sig = nlohmann::json::array();
                for (float sg : inst.keypoints->sigmas) sig.push_back(sg);
                a["oks_sigmas"] = sig;
            }
            root["annotations"].push_back(a);
        }
    }
    return root;
}

inline void export_coco_file(const std::string& path, const std::vector<SceneSample>& samples,
                             const std::vector<std::string>& class_names) {
    std::ofstream f(path);
    if (!f) throw DataError("export_coco: cannot open '" + path + "'");
    f << export_coco(samples, class_names).dump(1);
}

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& j, const char* key,
                                         const char* ctx) {
    auto it = j.find(key);
    if (it == j.end())
        throw DataError(std::string("coco import: missing required key '") + key + "' in " +
                        ctx);
    return *it;
}

}  // namespace detail

inline ImportedDataset import_coco(const nlohmann::json& root, float default_sigma = 0.1f) {
    ImportedDataset out;
    const auto& images = detail::require_key(root, "images", "top-level object");
    const auto& annotations = detail::require_key(root, "annotations", "top-level object");
    const auto& categories = detail::require_key(root, "categories", "top-level object");
    for (auto it = root.begin(); it != root.end(); ++it)
        if (it.key() != "images" && it.key() != "annotations" && it.key() != "categories")
            out.extra[it.key()] = it.value();

    std::map<int, int> cat_to_class;
    for (const auto& c : categories) {
        CocoCategory cat;
        cat.id = detail::require_key(c, "id", "category").get<int>();
        cat.name = detail::require_key(c, "name", "category").get<std::string>();
        cat_to_class[cat.id] = static_cast<int>(out.categories.size());
        out.categories.push_back(cat);
    }

    std::map<int, size_t> image_index;
    for (const auto& im : images) {
        ImportedSample s;
        s.image_id = detail::require_key(im, "id", "image").get<int>();
        s.width = detail::require_key(im, "width", "image").get<int>();
        s.height = detail::require_key(im, "height", "image").get<int>();
        if (im.contains("file_name")) s.file_name = im["file_name"].get<std::string>();
        if (im.contains("seed")) s.seed = im["seed"].get<std::uint64_t>();
        image_index[s.image_id] = out.samples.size();
        out.samples.push_back(s);
    }

    for (const auto& a : annotations) {
        int image_id = detail::require_key(a, "image_id", "annotation").get<int>();
        auto it = image_index.find(image_id);
        if (it == image_index.end())
            throw DataError("coco import: annotation references unknown image_id " +
                            std::to_string(image_id));
        auto& s = out.samples[it->second];
        const auto& bbox = detail::require_key(a, "bbox", "annotation");
        if (!bbox.is_array() || bbox.size() != 4)
            throw DataError("coco import: bbox must be [x,y,w,h]");
        int cat_id = detail::require_key(a, "category_id", "annotation").get<int>();
        auto cit = cat_to_class.find(cat_id);
        if (cit == cat_to_class.end())
            throw DataError("coco import: annotation references unknown category_id " +
                            std::to_string(cat_id));
        GroundTruthInstance inst;
        inst.class_id = cit->second;
        double W = s.width, H = s.height;
        double x = bbox[0].get<double>(), y = bbox[1].get<double>();
        double w = bbox[2].get<double>(), h = bbox[3].get<double>();
        inst.box = {static_cast<float>((x + w / 2) / W), static_cast<float>((y + h / 2) / H),
                    static_cast<float>(w / W), static_cast<float>(h / H)};
        inst.area = a.contains("area")
                        ? static_cast<float>(a["area"].get<double>() / (W * H))
                        : inst.box.w * inst.box.h;
        if (a.contains("keypoints")) {
            const auto& flat = a["keypoints"];
            if (flat.size() % 3 != 0)
                throw DataError("coco import: keypoints must be x,y,v triples");
            KeypointSet ks;
            for (size_t j = 0; j + 2 < flat.size(); j += 3) {
                ks.points.push_back({static_cast<float>(flat[j].get<double>() / W),
                                     static_cast<float>(flat[j + 1].get<double>() / H)});
                int v = flat[j + 2].get<int>();
                if (v < 0 || v > 2)
                    throw DataError("coco import: keypoint visibility must be 0, 1 or 2");
                ks.vis.push_back(static_cast<Visibility>(v));
            }
            if (a.contains("oks_sigmas")) {
                for (const auto& sg : a["oks_sigmas"]) ks.sigmas.push_back(sg.get<float>());
                if (ks.sigmas.size() != ks.points.size())
                    throw DataError("coco import: oks_sigmas length mismatch");
            } else {
                ks.sigmas.assign(ks.points.size(), default_sigma);
            }
            inst.keypoints = ks;
        }
        s.instances.push_back(inst);
    }
    return out;
}

inline ImportedDataset import_coco_file(const std::string& path, float default_sigma = 0.1f) {
    std::ifstream f(path);
    if (!f) throw DataError("import_coco: cannot open '" + path + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("import_coco: malformed JSON in '" + path + "' at byte " +
                        std::to_string(e.byte) + ": " + e.what());
    }
    return import_coco(root, default_sigma);
}

}  // namespace obj2seq
