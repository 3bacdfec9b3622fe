#include <catch2/catch_amalgamated.hpp>

#include "obj2seq/criterion.hpp"
#include "obj2seq/grad_check.hpp"

using namespace obj2seq;

namespace {

TrainConfig micro_config() {
    TrainConfig c;
    c.d = 8;
    c.patch = 4;
    c.image_size = 8;
    c.n_enc = 1;
    c.n_dec = 1;
    c.ffn_mult = 2;
    c.K = 2;
    c.Kprime = 2;
    c.N = 2;
    c.seed = 7;
    return c;
}

template <class T>
TensorT<T> random_image_t(int size, Rng& rng) {
    auto t = TensorT<T>::zeros({3, size, size});
    for (auto& v : t.mutable_values()) v = T(rng.unif());
    return t;
}

SceneSample one_gt_scene(int size) {
    SceneSample s;
    s.width = s.height = size;
    GroundTruthInstance inst;
    inst.class_id = 0;
    inst.box = {0.45f, 0.55f, 0.3f, 0.25f};
    inst.area = inst.box.w * inst.box.h;
    s.instances.push_back(inst);
    return s;
}

// hand-built prediction wrapping plain scalar tensors
template <class T>
ObjectPredictionT<T> make_pred(int class_id, T score, const BoxCxCyWH& box) {
    ObjectPredictionT<T> p;
    p.class_id = class_id;
    p.score = TensorT<T>::scalar(score);
    p.cond_score = TensorT<T>::scalar(score);
    p.box = BoxTensors<T>::constant(box);
    return p;
}

}  // namespace

TEST_CASE("pair cost prefers the exact box and excludes other classes", "[criterion]") {
    TrainConfig cfg = micro_config();
    SceneSample scene = one_gt_scene(8);
    const auto& gt = scene.instances[0];

    auto exact = make_pred<double>(0, 0.9, gt.box);
    auto offset = make_pred<double>(0, 0.9, BoxCxCyWH{0.6f, 0.6f, 0.3f, 0.25f});
    auto wrong_class = make_pred<double>(1, 0.9, gt.box);

    double c_exact = pair_cost(exact, gt, Task::detect, cfg);
    double c_offset = pair_cost(offset, gt, Task::detect, cfg);
    CHECK(c_exact < c_offset);
    CHECK(pair_cost(wrong_class, gt, Task::detect, cfg) == kExcludedCost);

    // perfect pair with score -> 1 has near-zero cost
    auto perfect = make_pred<double>(0, 1.0 - 1e-9, gt.box);
    CHECK(pair_cost(perfect, gt, Task::detect, cfg) < 1e-5);

    // hand recomputation of the weighted sum
    auto overlap = iou_giou(offset.box.value(), gt.box);
    double l1 = std::abs(0.6 - 0.45) + std::abs(0.6 - 0.55);
    double expect = cfg.w_obj * focal_pos_cost(0.9, cfg.focal) + cfg.w_l1 * l1 +
                    cfg.w_giou * (1.0 - overlap.giou);
    CHECK(c_offset == Catch::Approx(expect).epsilon(1e-6));
}

TEST_CASE("matching is within class and injective", "[criterion]") {
    TrainConfig cfg = micro_config();
    CriterionT<double> crit(cfg);
    SceneSample scene;
    scene.width = scene.height = 8;
    for (int i = 0; i < 2; ++i) {
        GroundTruthInstance inst;
        inst.class_id = i;
        inst.box = {0.3f + 0.3f * i, 0.4f, 0.2f, 0.2f};
        inst.area = 0.04f;
        scene.instances.push_back(inst);
    }
    std::vector<ObjectPredictionT<double>> preds;
    preds.push_back(make_pred<double>(0, 0.3, BoxCxCyWH{0.31f, 0.41f, 0.2f, 0.2f}));
    preds.push_back(make_pred<double>(0, 0.8, BoxCxCyWH{0.9f, 0.9f, 0.1f, 0.1f}));
    preds.push_back(make_pred<double>(1, 0.6, BoxCxCyWH{0.61f, 0.4f, 0.2f, 0.2f}));
    preds.push_back(make_pred<double>(1, 0.5, BoxCxCyWH{0.6f, 0.42f, 0.22f, 0.2f}));

    auto pairs = crit.match(preds, scene);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<int, int>{0, 0});  // class 0: near box wins
    CHECK(preds[pairs[1].first].class_id == 1);

    // a gt class with no queries is counted, not fatal
    SceneSample extra = scene;
    GroundTruthInstance orphan;
    orphan.class_id = 5;
    orphan.box = {0.5f, 0.5f, 0.1f, 0.1f};
    orphan.area = 0.01f;
    extra.instances.push_back(orphan);
    int unmatchable = 0;
    auto pairs2 = crit.match(preds, extra, &unmatchable);
    CHECK(pairs2.size() == 2);
    CHECK(unmatchable == 1);
}

TEST_CASE("criterion on empty ground truth reduces to negatives plus indicator", "[criterion]") {
    auto cfg = micro_config();
    ModelT<float> m(cfg);
    Rng rng(17);
    SceneSample empty;
    empty.width = empty.height = cfg.image_size;
    auto res = m.forward(random_image_t<float>(cfg.image_size, rng), std::set<int>{},
                         Retention::topk(cfg.Kprime));
    CriterionT<float> crit(cfg);
    auto loss = crit({&res}, {&empty});
    CHECK(loss.components.matched == 0);
    CHECK(loss.components.unmatched == static_cast<int>(res.predictions.size()));
    CHECK(loss.components.box_l1 == 0.0);
    CHECK(loss.components.giou == 0.0);
    CHECK(loss.components.indicator_asl > 0.0);
    CHECK(loss.total.item() > 0.0f);
}

TEST_CASE("loss is invariant to prediction order", "[criterion]") {
    auto cfg = micro_config();
    ModelT<float> m(cfg);
    Rng rng(23);
    auto scene = one_gt_scene(cfg.image_size);
    auto res = m.forward(random_image_t<float>(cfg.image_size, rng),
                         ModelT<float>::gt_class_set(scene), Retention::train(cfg.Kprime));
    CriterionT<float> crit(cfg);
    auto base = crit({&res}, {&scene});

    auto shuffled = res;
    std::swap(shuffled.predictions[0], shuffled.predictions[3]);
    std::swap(shuffled.predictions[1], shuffled.predictions[2]);
    auto permuted = crit({&shuffled}, {&scene});
    CHECK(permuted.total.item() ==
          Catch::Approx(base.total.item()).epsilon(1e-5));
    CHECK(permuted.components.matched == base.components.matched);
}

TEST_CASE("unmatched prediction with zero score adds almost nothing", "[criterion]") {
    auto cfg = micro_config();
    ModelT<float> m(cfg);
    Rng rng(29);
    auto scene = one_gt_scene(cfg.image_size);
    auto res = m.forward(random_image_t<float>(cfg.image_size, rng),
                         ModelT<float>::gt_class_set(scene), Retention::train(cfg.Kprime));
    CriterionT<float> crit(cfg);
    auto base = crit({&res}, {&scene});

    auto extended = res;
    extended.predictions.push_back(make_pred<float>(0, 0.0f, BoxCxCyWH{0.2f, 0.2f, 0.1f, 0.1f}));
    auto with_extra = crit({&extended}, {&scene});
    CHECK(with_extra.components.matched == base.components.matched);
    CHECK(std::abs(with_extra.total.item() - base.total.item()) < 1e-6f);
}

TEST_CASE("component weights reproduce configured ratios on a hand case", "[criterion]") {
    auto cfg = micro_config();
    cfg.w_obj = 2.0f;
    cfg.w_l1 = 5.0f;
    cfg.w_giou = 2.0f;
    cfg.w_asl = 0.25f;
    CriterionT<double> crit(cfg);

    // one matched prediction, one unmatched, one gt; indicator scores fixed
    SceneSample scene = one_gt_scene(8);
    ForwardResultT<double> res;
    res.indicator.scores = TensorT<double>::from_data({2, 1}, {0.7, 0.2});
    res.indicator.score_values = {0.7f, 0.2f};
    BoxCxCyWH off{0.5f, 0.5f, 0.3f, 0.25f};
    res.predictions.push_back(make_pred<double>(0, 0.6, off));
    res.predictions.push_back(make_pred<double>(0, 0.3, BoxCxCyWH{0.8f, 0.8f, 0.2f, 0.2f}));

    auto loss = crit({&res}, {&scene});

    double l1 = std::abs(0.5 - 0.45) + std::abs(0.5 - 0.55);
    double giou_l = 1.0 - iou_giou(off, scene.instances[0].box).giou;
    double obj = focal_loss_value(0.6, 1, cfg.focal) + focal_loss_value(0.3, 0, cfg.focal);
    double asl = asymmetric_loss_value(0.7, 1, cfg.asl) + asymmetric_loss_value(0.2, 0, cfg.asl);
    double expect = cfg.w_obj * obj + cfg.w_l1 * l1 + cfg.w_giou * giou_l + cfg.w_asl * asl;
    CHECK(loss.total.item() == Catch::Approx(expect).epsilon(1e-6));
    CHECK(loss.components.box_l1 == Catch::Approx(l1).epsilon(1e-6));
    CHECK(loss.components.giou == Catch::Approx(giou_l).epsilon(1e-6));
    CHECK(loss.components.objectness == Catch::Approx(obj).epsilon(1e-6));
    CHECK(loss.components.indicator_asl == Catch::Approx(asl).epsilon(1e-6));
}

TEST_CASE("full detection criterion passes finite differences on a micro model",
          "[criterion][gradsuite]") {
    auto cfg = micro_config();
    ModelT<double> model(cfg);
    Rng rng(41);
    auto image = random_image_t<double>(cfg.image_size, rng);
    auto scene = one_gt_scene(cfg.image_size);
    CriterionT<double> crit(cfg);

    // fix the assignment once; matching is non-differentiable
    auto first = model.forward(image, ModelT<double>::gt_class_set(scene),
                               Retention::train(cfg.Kprime));
    auto fixed_matches = crit.match(first.predictions, scene);
    auto retained = first.indicator.retained;

    auto objective = [&](std::vector<TensorT<double>>&) {
        auto feats = model.encode(image);
        auto ind = model.indicate(feats, ModelT<double>::gt_class_set(scene),
                                  Retention::train(cfg.Kprime));
        auto res = model.detect(std::move(feats), std::move(ind));
        auto loss = crit.loss_given_matches({&res}, {&scene}, {fixed_matches});
        return loss.total;
    };

    // a representative slice of every module's parameters
    std::vector<TensorT<double>> inputs;
    for (const char* name :
         {"encoder.patch.w", "encoder.layer0.attn.q.w", "indicator.prompts",
          "indicator.pos_emb", "indicator.classifier.w", "decoder.layer0.cross.v.w",
          "decoder.ref_head.w", "predictor.self.wq", "predictor.cross.wv",
          "predictor.step_heads", "predictor.objectness.w"})
        inputs.push_back(model.params().find(name));

    auto rep = grad_check<double>(objective, inputs, 1e-5);
    INFO("worst " << rep.worst << " over " << rep.checked << " coords");
    CHECK(rep.max_rel_error < 1e-3);
}
