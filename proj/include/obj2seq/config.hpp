#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "obj2seq/common.hpp"
#include "obj2seq/losses.hpp"

namespace obj2seq {

enum class Task { detect, pose };
enum class HeadKind { sequence, mlp };
enum class ObjectnessMode { separate, merged };
enum class RetentionPolicy { train, eval_topk, eval_threshold };

inline std::string to_string(Task t) { return t == Task::detect ? "detect" : "pose"; }
inline std::string to_string(HeadKind h) { return h == HeadKind::sequence ? "sequence" : "mlp"; }
inline std::string to_string(ObjectnessMode m) {
    return m == ObjectnessMode::separate ? "separate" : "merged";
}

struct TrainConfig {
    Task task = Task::detect;

    // model
    int d = 64;
    int patch = 4;
    int image_size = 64;
    int n_enc = 2;
    int n_dec = 2;
    int ffn_mult = 2;
    int K = 5;        // prompted classes
    int Kprime = 3;   // retained classes during training
    int N = 10;       // object queries per retained class
    int J = 3;        // keypoints per instance (pose)
    HeadKind head = HeadKind::sequence;
    ObjectnessMode objectness = ObjectnessMode::separate;

    // losses
    float w_obj = 2.0f;
    float w_l1 = 5.0f;
    float w_giou = 2.0f;
    float w_oks = 40.0f;
    float w_kpt_l1 = 5.0f;
    float w_asl = 0.25f;
    FocalParams focal{};
    AslParams asl{};

    // optimization
    float lr = 1e-3f;
    float lr_decay_factor = 0.1f;
    int lr_decay_epoch = 24;
    int epochs = 30;
    int batch = 8;
    float weight_decay = 1e-4f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float clip_norm = 0.1f;
    std::uint64_t seed = 1;

    // data
    int train_scenes = 2000;
    int val_scenes = 200;
    std::uint64_t data_seed = 77000;
    int max_instances = 3;
    float kpt_sigma = 0.1f;
    int eval_every = 10;

    std::vector<std::string> class_names;

    // sequence length: number of attributes per object
    int sequence_len() const { return task == Task::pose ? 4 + 2 * J : 4; }

    std::vector<std::string> effective_class_names() const {
        static const char* kDetectNames[5] = {"red-circle", "green-square", "blue-triangle",
                                              "magenta-ring", "orange-cross"};
        if (!class_names.empty()) return class_names;
        std::vector<std::string> names;
        for (int k = 0; k < K; ++k) {
            if (task == Task::detect && K <= 5)
                names.push_back(kDetectNames[k]);
            else if (task == Task::pose && K == 1)
                names.push_back("glyph");
            else
                names.push_back("class" + std::to_string(k));
        }
        return names;
    }

    void validate() const {
        auto positive = [](const char* name, auto v) {
            if (v <= 0) throw ContractError(std::string("config: ") + name + " must be positive");
        };
        positive("d", d);
        positive("patch", patch);
        positive("image_size", image_size);
        positive("K", K);
        positive("Kprime", Kprime);
        positive("N", N);
        positive("epochs", epochs);
        positive("batch", batch);
        positive("lr", lr);
        positive("train_scenes", train_scenes);
        if (Kprime > K) throw ContractError("config: Kprime must not exceed K");
        if (image_size % patch != 0)
            throw ShapeError("config: image_size " + std::to_string(image_size) +
                             " not divisible by patch " + std::to_string(patch));
        if (task == Task::pose && J < 1) throw ContractError("config: pose task needs J >= 1");
        if (!class_names.empty() && static_cast<int>(class_names.size()) != K)
            throw ContractError("config: class_names count must equal K");
    }
};

namespace detail {

inline std::map<std::string, std::string> parse_kv_text(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key=value");
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

}  // namespace detail

inline void apply_config_entry(TrainConfig& c, const std::string& key, const std::string& val) {
    auto as_int = [&] { return std::stoi(val); };
    auto as_float = [&] { return std::stof(val); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(val)); };
    if (key == "task") {
        if (val == "detect")
            c.task = Task::detect;
        else if (val == "pose")
            c.task = Task::pose;
        else
            throw DataError("config: unknown task '" + val + "'");
    } else if (key == "head") {
        if (val == "sequence")
            c.head = HeadKind::sequence;
        else if (val == "mlp")
            c.head = HeadKind::mlp;
        else
            throw DataError("config: unknown head '" + val + "'");
    } else if (key == "objectness") {
        if (val == "separate")
            c.objectness = ObjectnessMode::separate;
        else if (val == "merged")
            c.objectness = ObjectnessMode::merged;
        else
            throw DataError("config: unknown objectness mode '" + val + "'");
    } else if (key == "class_names") {
        c.class_names.clear();
        std::stringstream ss(val);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) c.class_names.push_back(item);
    } else if (key == "d") c.d = as_int();
    else if (key == "patch") c.patch = as_int();
    else if (key == "image_size") c.image_size = as_int();
    else if (key == "n_enc") c.n_enc = as_int();
    else if (key == "n_dec") c.n_dec = as_int();
    else if (key == "ffn_mult") c.ffn_mult = as_int();
    else if (key == "K") c.K = as_int();
    else if (key == "Kprime") c.Kprime = as_int();
    else if (key == "N") c.N = as_int();
    else if (key == "J") c.J = as_int();
    else if (key == "w_obj") c.w_obj = as_float();
    else if (key == "w_l1") c.w_l1 = as_float();
    else if (key == "w_giou") c.w_giou = as_float();
    else if (key == "w_oks") c.w_oks = as_float();
    else if (key == "w_kpt_l1") c.w_kpt_l1 = as_float();
    else if (key == "w_asl") c.w_asl = as_float();
    else if (key == "focal_alpha") c.focal.alpha = as_float();
    else if (key == "focal_gamma") c.focal.gamma = as_float();
    else if (key == "asl_gamma_pos") c.asl.gamma_pos = as_float();
    else if (key == "asl_gamma_neg") c.asl.gamma_neg = as_float();
    else if (key == "asl_clip") c.asl.clip = as_float();
    else if (key == "lr") c.lr = as_float();
    else if (key == "lr_decay_factor") c.lr_decay_factor = as_float();
    else if (key == "lr_decay_epoch") c.lr_decay_epoch = as_int();
    else if (key == "epochs") c.epochs = as_int();
    else if (key == "batch") c.batch = as_int();
    else if (key == "weight_decay") c.weight_decay = as_float();
    else if (key == "adam_beta1") c.adam_beta1 = as_float();
    else if (key == "adam_beta2") c.adam_beta2 = as_float();
    else if (key == "clip_norm") c.clip_norm = as_float();
    else if (key == "seed") c.seed = as_u64();
    else if (key == "train_scenes") c.train_scenes = as_int();
    else if (key == "val_scenes") c.val_scenes = as_int();
    else if (key == "data_seed") c.data_seed = as_u64();
    else if (key == "max_instances") c.max_instances = as_int();
    else if (key == "kpt_sigma") c.kpt_sigma = as_float();
    else if (key == "eval_every") c.eval_every = as_int();
    else throw DataError("config: unknown key '" + key + "'");
}

inline TrainConfig parse_config(std::istream& in) {
    TrainConfig c;
    for (const auto& [k, v] : detail::parse_kv_text(in)) apply_config_entry(c, k, v);
    c.validate();
    return c;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config: cannot open '" + path + "'");
    return parse_config(f);
}

inline std::string serialize_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "task=" << to_string(c.task) << "\n";
    os << "d=" << c.d << "\npatch=" << c.patch << "\nimage_size=" << c.image_size << "\n";
    os << "n_enc=" << c.n_enc << "\nn_dec=" << c.n_dec << "\nffn_mult=" << c.ffn_mult << "\n";
    os << "K=" << c.K << "\nKprime=" << c.Kprime << "\nN=" << c.N << "\nJ=" << c.J << "\n";
    os << "head=" << to_string(c.head) << "\nobjectness=" << to_string(c.objectness) << "\n";
    os << "w_obj=" << c.w_obj << "\nw_l1=" << c.w_l1 << "\nw_giou=" << c.w_giou << "\n";
    os << "w_oks=" << c.w_oks << "\nw_kpt_l1=" << c.w_kpt_l1 << "\nw_asl=" << c.w_asl << "\n";
    os << "focal_alpha=" << c.focal.alpha << "\nfocal_gamma=" << c.focal.gamma << "\n";
    os << "asl_gamma_pos=" << c.asl.gamma_pos << "\nasl_gamma_neg=" << c.asl.gamma_neg
       << "\nasl_clip=" << c.asl.clip << "\n";
    os << "lr=" << c.lr << "\nlr_decay_factor=" << c.lr_decay_factor << "\nlr_decay_epoch="
       << c.lr_decay_epoch << "\n";
    os << "epochs=" << c.epochs << "\nbatch=" << c.batch << "\nweight_decay=" << c.weight_decay
       << "\n";
    os << "adam_beta1=" << c.adam_beta1 << "\nadam_beta2=" << c.adam_beta2 << "\nclip_norm="
       << c.clip_norm << "\n";
    os << "seed=" << c.seed << "\n";
    os << "train_scenes=" << c.train_scenes << "\nval_scenes=" << c.val_scenes << "\ndata_seed="
       << c.data_seed << "\n";
    os << "max_instances=" << c.max_instances << "\nkpt_sigma=" << c.kpt_sigma << "\neval_every="
       << c.eval_every << "\n";
    if (!c.class_names.empty()) {
        os << "class_names=";
        for (size_t i = 0; i < c.class_names.size(); ++i)
            os << (i ? "," : "") << c.class_names[i];
        os << "\n";
    }
    return os.str();
}

}  // namespace obj2seq
