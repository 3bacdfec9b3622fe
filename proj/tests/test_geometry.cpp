#include <catch2/catch_amalgamated.hpp>

#include "obj2seq/geometry.hpp"
#include "obj2seq/grad_check.hpp"

using namespace obj2seq;

using DTensor = TensorT<double>;

TEST_CASE("inverse sigmoid basics", "[geometry]") {
    CHECK(inverse_sigmoid(0.5) == Catch::Approx(0.0).margin(1e-12));
    CHECK(inverse_sigmoid(0.7) == Catch::Approx(std::log(7.0 / 3.0)).epsilon(1e-9));
    for (double x = -5.0; x <= 5.0; x += 0.5)
        CHECK(inverse_sigmoid(sigmoid_value(x)) == Catch::Approx(x).margin(1e-9));
    // clamped at the extremes, still finite
    CHECK(std::isfinite(inverse_sigmoid(0.0)));
    CHECK(std::isfinite(inverse_sigmoid(1.0)));
}

TEST_CASE("decode_box reference cases", "[geometry]") {
    std::array<double, 4> z0{0, 0, 0, 0};
    auto b = decode_box(0.5, 0.5, std::span<const double>(z0));
    CHECK(b.xc == Catch::Approx(0.5));
    CHECK(b.yc == Catch::Approx(0.5));
    CHECK(b.w == Catch::Approx(0.5));
    CHECK(b.h == Catch::Approx(0.5));

    std::array<double, 4> z1{std::log(7.0 / 3.0), 0, 0, 0};
    CHECK(decode_box(0.5, 0.5, std::span<const double>(z1)).xc == Catch::Approx(0.7).epsilon(1e-6));

    // x_c strictly increasing in z1
    float prev = -1.0f;
    for (double z = -3.0; z <= 3.0; z += 0.25) {
        std::array<double, 4> zz{z, 0, 0, 0};
        float xc = decode_box(0.4, 0.6, std::span<const double>(zz)).xc;
        CHECK(xc > prev);
        prev = xc;
    }

    std::array<double, 3> bad{0, 0, 0};
    CHECK_THROWS_AS(decode_box(0.5, 0.5, std::span<const double>(bad)), ContractError);
}

TEST_CASE("decode/encode round trip within 1e-5", "[geometry]") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        double rx = rng.unifd() * 0.9 + 0.05;
        double ry = rng.unifd() * 0.9 + 0.05;
        BoxCxCyWH box{static_cast<float>(rng.unifd() * 0.9 + 0.05),
                      static_cast<float>(rng.unifd() * 0.9 + 0.05),
                      static_cast<float>(rng.unifd() * 0.9 + 0.05),
                      static_cast<float>(rng.unifd() * 0.9 + 0.05)};
        auto z = encode_box(rx, ry, box);
        auto back = decode_box(rx, ry, std::span<const double>(z));
        CHECK(back.xc == Catch::Approx(box.xc).margin(1e-5));
        CHECK(back.yc == Catch::Approx(box.yc).margin(1e-5));
        CHECK(back.w == Catch::Approx(box.w).margin(1e-5));
        CHECK(back.h == Catch::Approx(box.h).margin(1e-5));
    }
}

TEST_CASE("decode_keypoints reference cases", "[geometry]") {
    BoxCxCyWH box{0.5f, 0.5f, 0.2f, 0.4f};
    std::array<double, 2> off{1.0, -1.0};
    auto pts = decode_keypoints(box, std::span<const double>(off));
    REQUIRE(pts.size() == 1);
    CHECK(pts[0][0] == Catch::Approx(0.7).epsilon(1e-6));
    CHECK(pts[0][1] == Catch::Approx(0.1).epsilon(1e-6));

    // zero offsets put every keypoint at the center
    std::array<double, 6> zeros{};
    for (auto& p : decode_keypoints(box, std::span<const double>(zeros))) {
        CHECK(p[0] == Catch::Approx(box.xc));
        CHECK(p[1] == Catch::Approx(box.yc));
    }

    // doubling (w, h) doubles the displacement from center
    BoxCxCyWH big{0.5f, 0.5f, 0.4f, 0.8f};
    auto p1 = decode_keypoints(box, std::span<const double>(off));
    auto p2 = decode_keypoints(big, std::span<const double>(off));
    CHECK(p2[0][0] - big.xc == Catch::Approx(2.0 * (p1[0][0] - box.xc)).epsilon(1e-6));
    CHECK(p2[0][1] - big.yc == Catch::Approx(2.0 * (p1[0][1] - box.yc)).epsilon(1e-6));

    std::array<double, 3> odd{0, 0, 0};
    CHECK_THROWS_AS(decode_keypoints(box, std::span<const double>(odd)), ContractError);
}

TEST_CASE("giou reference cases", "[geometry]") {
    BoxCxCyWH a{0.3f, 0.3f, 0.2f, 0.2f};
    auto self = iou_giou(a, a);
    CHECK(self.iou == Catch::Approx(1.0).epsilon(1e-6));
    CHECK(self.giou == Catch::Approx(1.0).epsilon(1e-6));

    // xyxy corners (0,0)-(2,2) and (1,1)-(3,3), scaled into the unit square
    BoxCxCyWH c1{0.25f, 0.25f, 0.5f, 0.5f};
    BoxCxCyWH c2{0.5f, 0.5f, 0.5f, 0.5f};
    auto r = iou_giou(c1, c2);
    CHECK(r.iou == Catch::Approx(1.0 / 7.0).epsilon(1e-6));
    CHECK(r.giou == Catch::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-6));

    auto rr = iou_giou(c2, c1);
    CHECK(r.iou == Catch::Approx(rr.iou));
    CHECK(r.giou == Catch::Approx(rr.giou));
}

TEST_CASE("iou dominates giou; equality iff hull == union", "[geometry]") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        BoxCxCyWH a{rng.unif(0.2f, 0.8f), rng.unif(0.2f, 0.8f), rng.unif(0.05f, 0.4f),
                    rng.unif(0.05f, 0.4f)};
        BoxCxCyWH b{rng.unif(0.2f, 0.8f), rng.unif(0.2f, 0.8f), rng.unif(0.05f, 0.4f),
                    rng.unif(0.05f, 0.4f)};
        auto r = iou_giou(a, b);
        CHECK(r.iou >= r.giou - 1e-9);
        CHECK(r.iou >= 0.0);
        CHECK(r.iou <= 1.0 + 1e-9);
        CHECK(r.giou > -1.0);
        CHECK(r.giou <= 1.0 + 1e-9);
    }
    // identical boxes: hull == union so giou == iou
    BoxCxCyWH a{0.4f, 0.4f, 0.3f, 0.3f};
    auto r = iou_giou(a, a);
    CHECK(r.iou == Catch::Approx(r.giou));
}

TEST_CASE("giou gradient matches finite differences", "[geometry]") {
    Rng rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<DTensor> coords;
        for (int i = 0; i < 2; ++i) {
            coords.push_back(DTensor::scalar(rng.unifd() * 0.5 + 0.25));
            coords.push_back(DTensor::scalar(rng.unifd() * 0.5 + 0.25));
            coords.push_back(DTensor::scalar(rng.unifd() * 0.3 + 0.1));
            coords.push_back(DTensor::scalar(rng.unifd() * 0.3 + 0.1));
        }
        auto g = [](std::vector<DTensor>& xs) {
            BoxTensors<double> a{xs[0], xs[1], xs[2], xs[3]};
            BoxTensors<double> b{xs[4], xs[5], xs[6], xs[7]};
            return iou_giou_t(a, b).giou;
        };
        auto rep = grad_check<double>(g, coords, 1e-5);
        INFO("trial " << trial << " worst " << rep.worst);
        CHECK(rep.max_rel_error < 1e-3);
    }
}

TEST_CASE("giou grad through sum of pair (float path sanity)", "[geometry]") {
    // spec example: f = sum of GIoU over a box pair in general position
    std::vector<DTensor> coords;
    for (double v : {0.4, 0.45, 0.3, 0.25, 0.6, 0.55, 0.2, 0.35})
        coords.push_back(DTensor::scalar(v));
    auto g = [](std::vector<DTensor>& xs) {
        BoxTensors<double> a{xs[0], xs[1], xs[2], xs[3]};
        BoxTensors<double> b{xs[4], xs[5], xs[6], xs[7]};
        return sum(iou_giou_t(a, b).giou);
    };
    auto rep = grad_check<double>(g, coords, 1e-5);
    CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("oks reference cases", "[geometry]") {
    KeypointSet gt;
    gt.points = {{0.5f, 0.5f}, {0.6f, 0.4f}};
    gt.vis = {Visibility::labeled_visible, Visibility::labeled_visible};
    gt.sigmas = {0.1f, 0.1f};

    CHECK(oks(gt.points, gt, 0.04) == Catch::Approx(1.0));

    // one keypoint at squared distance 2 s^2 k^2 -> exp(-1)
    KeypointSet one;
    one.points = {{0.5f, 0.5f}};
    one.vis = {Visibility::labeled_visible};
    one.sigmas = {0.1f};
    double area = 0.09;  // s^2
    double d = std::sqrt(2.0 * area * 0.1 * 0.1);
    std::vector<std::array<float, 2>> pred{{static_cast<float>(0.5 + d), 0.5f}};
    CHECK(oks(pred, one, area) == Catch::Approx(std::exp(-1.0)).epsilon(1e-6));

    // unlabeled keypoint with arbitrary prediction changes nothing
    KeypointSet two = one;
    two.points.push_back({0.9f, 0.9f});
    two.vis.push_back(Visibility::invalid);
    two.sigmas.push_back(0.1f);
    auto pred2 = pred;
    pred2.push_back({-5.0f, 12.0f});
    CHECK(oks(pred2, two, area) == Catch::Approx(std::exp(-1.0)).epsilon(1e-6));

    KeypointSet none;
    none.points = {{0.5f, 0.5f}};
    none.vis = {Visibility::invalid};
    none.sigmas = {0.1f};
    CHECK_THROWS_AS(oks(pred, none, area), ContractError);
    CHECK_THROWS_AS(oks(pred, one, 0.0), ContractError);
}

TEST_CASE("oks tensor path matches plain path", "[geometry]") {
    KeypointSet gt;
    gt.points = {{0.45f, 0.5f}, {0.62f, 0.41f}, {0.5f, 0.7f}};
    gt.vis = {Visibility::labeled_visible, Visibility::labeled_invisible,
              Visibility::labeled_visible};
    gt.sigmas = {0.1f, 0.1f, 0.1f};
    std::vector<std::array<float, 2>> pred{{0.47f, 0.52f}, {0.60f, 0.44f}, {0.52f, 0.68f}};
    std::vector<std::array<TensorT<double>, 2>> predt;
    for (auto& p : pred)
        predt.push_back({TensorT<double>::scalar(p[0]), TensorT<double>::scalar(p[1])});
    double area = 0.05;
    CHECK(oks_t(predt, gt, area).item() == Catch::Approx(oks(pred, gt, area)).epsilon(1e-7));
}
