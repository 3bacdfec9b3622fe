// obj2seq command-line interface: dataset synthesis, training, evaluation,
// retention sweeps and single-image inference.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "obj2seq/checkpoint.hpp"
#include "obj2seq/eval.hpp"
#include "obj2seq/trainer.hpp"

namespace fs = std::filesystem;
using namespace obj2seq;

namespace {

TrainConfig config_from(const std::string& config_path,
                        const std::vector<std::string>& overrides) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw DataError("--set expects key=value, got '" + kv + "'");
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

Retention retention_from(const std::string& policy, int kprime, float theta) {
    if (policy == "topk") return Retention::topk(kprime);
    if (policy == "threshold") return Retention::threshold(theta);
    throw DataError("unknown retention policy '" + policy + "' (topk|threshold)");
}

std::vector<SceneSample> scenes_for_eval(const TrainConfig& cfg, int count,
                                         std::uint64_t data_seed, const std::string& coco_path,
                                         const std::string& image_dir) {
    if (coco_path.empty()) {
        auto spec = SceneSpec::from_config(cfg);
        return generate_dataset(data_seed, count, spec);
    }
    auto imported = import_coco_file(coco_path, cfg.kpt_sigma);
    std::vector<SceneSample> scenes;
    for (const auto& s : imported.samples) {
        SceneSample scene;
        if (!image_dir.empty() && !s.file_name.empty())
            scene = read_ppm((fs::path(image_dir) / s.file_name).string());
        else
            throw DataError("eval with --coco requires --images pointing at the ppm files");
        if (scene.width != s.width || scene.height != s.height)
            throw DataError("image size mismatch for '" + s.file_name + "'");
        scene.seed = s.seed;
        scene.instances = s.instances;
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

nlohmann::json report_json(const ModelEvalResult& ev) {
    nlohmann::json j;
    j["ap"] = ev.report.ap;
    j["ap50"] = ev.report.ap50;
    j["ap75"] = ev.report.ap75;
    j["ar"] = ev.report.ar;
    j["per_class"] = ev.report.per_class;
    j["classes_evaluated"] = ev.report.classes_evaluated;
    j["detections"] = ev.report.detections;
    j["gt_instances"] = ev.report.gt_instances;
    j["multilabel_map"] = ev.multilabel;
    j["queries_evaluated"] = ev.queries_evaluated;
    return j;
}

int run(int argc, char** argv) {
    CLI::App app{"obj2seq: prompted class-aware detection with per-object "
                 "sequence decoding, trained on procedural scenes"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate scenes as .ppm plus COCO json");
    std::string synth_config, synth_out = "dataset";
    std::vector<std::string> synth_set;
    int synth_count = 100;
    std::uint64_t synth_seed = 1;
    synth->add_option("--config", synth_config, "config file");
    synth->add_option("--set", synth_set, "override config key=value")->take_all();
    synth->add_option("--count", synth_count, "number of scenes");
    synth->add_option("--seed", synth_seed, "base scene seed");
    synth->add_option("--out", synth_out, "output directory");

    // train
    auto* train = app.add_subcommand("train", "train a model on synthetic scenes");
    std::string train_config, train_out = "run", train_resume;
    std::vector<std::string> train_set;
    train->add_option("--config", train_config, "config file");
    train->add_option("--set", train_set, "override config key=value")->take_all();
    train->add_option("--out", train_out, "output directory (checkpoint + metrics)");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_out, eval_coco, eval_images, eval_policy = "topk";
    int eval_scenes = 200, eval_kprime = -1;
    std::uint64_t eval_seed = 990000;
    float eval_theta = 0.3f;
    bool eval_noclass = false;
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_option("--scenes", eval_scenes, "synthetic scene count");
    eval->add_option("--data-seed", eval_seed, "synthetic scene base seed");
    eval->add_option("--coco", eval_coco, "evaluate annotations from a COCO json instead");
    eval->add_option("--images", eval_images, "directory of .ppm files for --coco");
    eval->add_option("--policy", eval_policy, "retention policy: topk|threshold");
    eval->add_option("--kprime", eval_kprime, "K' for topk (default: config)");
    eval->add_option("--theta", eval_theta, "threshold for the threshold policy");
    eval->add_flag("--no-class-score", eval_noclass, "score without the s_C factor");
    eval->add_option("--out", eval_out, "write the report as json");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "retention-policy sweep, CSV output");
    std::string sweep_ckpt, sweep_out = "sweep.csv", sweep_kgrid = "", sweep_tgrid = "";
    int sweep_scenes = 200;
    std::uint64_t sweep_seed = 990000;
    sweep->add_option("--checkpoint", sweep_ckpt, "trained checkpoint")->required();
    sweep->add_option("--scenes", sweep_scenes, "synthetic scene count");
    sweep->add_option("--data-seed", sweep_seed, "synthetic scene base seed");
    sweep->add_option("--kprime-grid", sweep_kgrid, "comma list of K' values");
    sweep->add_option("--theta-grid", sweep_tgrid, "comma list of thresholds");
    sweep->add_option("--out", sweep_out, "output CSV path");

    // infer
    auto* infer = app.add_subcommand("infer", "run a checkpoint on one image");
    std::string infer_ckpt, infer_image, infer_out, infer_policy = "topk";
    int infer_kprime = -1;
    float infer_theta = 0.3f, infer_min_score = 0.05f;
    infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
    infer->add_option("--image", infer_image, "input .ppm image")->required();
    infer->add_option("--policy", infer_policy, "retention policy: topk|threshold");
    infer->add_option("--kprime", infer_kprime, "K' for topk (default: config)");
    infer->add_option("--theta", infer_theta, "threshold for the threshold policy");
    infer->add_option("--min-score", infer_min_score, "drop detections below this score");
    infer->add_option("--out", infer_out, "write predictions as json (default stdout)");

    CLI11_PARSE(app, argc, argv);
    apply_thread_cap();

    if (synth->parsed()) {
        auto cfg = config_from(synth_config, synth_set);
        fs::create_directories(synth_out);
        auto scenes = generate_dataset(synth_seed, synth_count, SceneSpec::from_config(cfg));
        for (const auto& s : scenes)
            write_ppm((fs::path(synth_out) / ("scene_" + std::to_string(s.seed) + ".ppm"))
                          .string(),
                      s);
        export_coco_file((fs::path(synth_out) / "coco.json").string(), scenes,
                         cfg.effective_class_names());
        std::cout << "wrote " << scenes.size() << " scenes to " << synth_out << "\n";
        return 0;
    }

    if (train->parsed()) {
        auto cfg = config_from(train_config, train_set);
        fs::create_directories(train_out);
        Trainer trainer(cfg);
        if (!train_resume.empty()) trainer.resume_from(train_resume);
        std::ofstream metrics(fs::path(train_out) / "metrics.log");
        struct Tee : std::ostream, std::streambuf {
            std::ostream &a, &b;
            Tee(std::ostream& a, std::ostream& b) : std::ostream(this), a(a), b(b) {}
            int overflow(int c) override {
                a.put(static_cast<char>(c));
                b.put(static_cast<char>(c));
                return c;
            }
        } tee(std::cout, metrics);
        auto ckpt_path = (fs::path(train_out) / "model.ckpt").string();
        auto outcome = trainer.run(&tee, ckpt_path);
        std::ofstream report(fs::path(train_out) / "final_eval.json");
        report << report_json(outcome.final_eval).dump(1) << "\n";
        std::cout << "final map=" << outcome.final_eval.report.ap
                  << " ap50=" << outcome.final_eval.report.ap50
                  << " multilabel=" << outcome.final_eval.multilabel << "\n";
        std::cout << "checkpoint: " << ckpt_path << "\n";
        return 0;
    }

    if (eval->parsed()) {
        auto ck = load_checkpoint(eval_ckpt);
        auto model = model_from_checkpoint(ck);
        if (eval_kprime < 0) eval_kprime = ck.config.Kprime;
        auto scenes =
            scenes_for_eval(ck.config, eval_scenes, eval_seed, eval_coco, eval_images);
        auto ret = retention_from(eval_policy, eval_kprime, eval_theta);
        auto ev = evaluate_model(model, scenes, ret, !eval_noclass);
        auto j = report_json(ev);
        if (!eval_out.empty()) {
            std::ofstream f(eval_out);
            f << j.dump(1) << "\n";
        }
        std::cout << j.dump(1) << "\n";
        return 0;
    }

    if (sweep->parsed()) {
        auto ck = load_checkpoint(sweep_ckpt);
        auto model = model_from_checkpoint(ck);
        auto scenes = generate_dataset(sweep_seed, sweep_scenes,
                                       SceneSpec::from_config(ck.config));
        std::vector<int> kgrid;
        std::vector<float> tgrid;
        auto parse_list = [](const std::string& s, auto push) {
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) push(item);
        };
        parse_list(sweep_kgrid, [&](const std::string& s) { kgrid.push_back(std::stoi(s)); });
        parse_list(sweep_tgrid, [&](const std::string& s) { tgrid.push_back(std::stof(s)); });
        if (kgrid.empty())
            for (int k = ck.config.Kprime; k <= ck.config.K; ++k) kgrid.push_back(k);
        if (tgrid.empty()) tgrid = {0.0f, 0.05f, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
        auto rows = retention_sweep(model, scenes, kgrid, tgrid);
        std::ofstream f(sweep_out);
        f << sweep_csv(rows);
        std::cout << sweep_csv(rows);
        return 0;
    }

    if (infer->parsed()) {
        auto ck = load_checkpoint(infer_ckpt);
        auto model = model_from_checkpoint(ck);
        if (infer_kprime < 0) infer_kprime = ck.config.Kprime;
        auto scene = read_ppm(infer_image);
        auto ret = retention_from(infer_policy, infer_kprime, infer_theta);
        auto res = model.forward(scene, std::nullopt, ret);
        auto names = ck.config.effective_class_names();
        nlohmann::json dets = nlohmann::json::array();
        for (const auto& p : res.predictions) {
            float score = p.score_value();
            if (score < infer_min_score) continue;
            auto box = p.box.value();
            nlohmann::json d{{"class_id", p.class_id},
                             {"class_name", names[p.class_id]},
                             {"score", score},
                             {"box_cxcywh", {box.xc, box.yc, box.w, box.h}},
                             {"bbox_xywh_px",
                              {(box.xc - box.w / 2) * scene.width,
                               (box.yc - box.h / 2) * scene.height, box.w * scene.width,
                               box.h * scene.height}}};
            if (!p.keypoints.empty()) {
                nlohmann::json kps = nlohmann::json::array();
                for (const auto& kp : p.keypoints) {
                    kps.push_back(kp[0].item() * scene.width);
                    kps.push_back(kp[1].item() * scene.height);
                }
                d["keypoints_px"] = kps;
            }
            dets.push_back(d);
        }
        nlohmann::json out{{"image", infer_image},
                           {"width", scene.width},
                           {"height", scene.height},
                           {"scores_per_class", res.indicator.score_values},
                           {"detections", dets}};
        if (!infer_out.empty()) {
            std::ofstream f(infer_out);
            f << out.dump(1) << "\n";
        } else {
            std::cout << out.dump(1) << "\n";
        }
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
