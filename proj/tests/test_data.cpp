#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "obj2seq/data.hpp"

using namespace obj2seq;

TEST_CASE("scene generation is deterministic per seed", "[data]") {
    SceneSpec spec;
    auto a = generate_scene(1234, spec);
    auto b = generate_scene(1234, spec);
    CHECK(a.pixels == b.pixels);
    REQUIRE(a.instances.size() == b.instances.size());
    for (size_t i = 0; i < a.instances.size(); ++i) {
        CHECK(a.instances[i].class_id == b.instances[i].class_id);
        CHECK(a.instances[i].box.xc == b.instances[i].box.xc);
    }
    auto c = generate_scene(1235, spec);
    CHECK(a.pixels != c.pixels);
}

TEST_CASE("scene invariants", "[data]") {
    SceneSpec spec;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto s = generate_scene(seed, spec);
        CHECK(!s.instances.empty());
        CHECK(static_cast<int>(s.instances.size()) <= spec.max_instances);
        std::set<int> classes;
        for (const auto& in : s.instances) {
            classes.insert(in.class_id);
            CHECK(in.class_id < spec.classes);
            CHECK(in.area > 0.0f);
            CHECK(in.box.xc - in.box.w / 2 >= 0.0f);
            CHECK(in.box.xc + in.box.w / 2 <= 1.0f);
            CHECK(in.box.yc - in.box.h / 2 >= 0.0f);
            CHECK(in.box.yc + in.box.h / 2 <= 1.0f);
        }
        CHECK(static_cast<int>(classes.size()) <= spec.max_distinct_classes);
    }
}

TEST_CASE("rendered shape centroid lies within its box", "[data]") {
    // background is grayscale, shapes are saturated: the colorfulness
    // centroid of a single-instance scene must land inside the gt box
    SceneSpec spec;
    spec.max_instances = 1;
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        auto s = generate_scene(seed, spec);
        REQUIRE(s.instances.size() == 1);
        double mx = 0, my = 0, mass = 0;
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const auto* p = s.px(x, y);
                int hi = std::max({p[0], p[1], p[2]});
                int lo = std::min({p[0], p[1], p[2]});
                double colorful = hi - lo;
                mx += colorful * (x + 0.5) / s.width;
                my += colorful * (y + 0.5) / s.height;
                mass += colorful;
            }
        REQUIRE(mass > 0);
        mx /= mass;
        my /= mass;
        const auto& b = s.instances[0].box;
        CHECK(mx >= b.xc - b.w / 2);
        CHECK(mx <= b.xc + b.w / 2);
        CHECK(my >= b.yc - b.h / 2);
        CHECK(my <= b.yc + b.h / 2);
    }
}

TEST_CASE("class histogram over many seeds is approximately uniform", "[data]") {
    SceneSpec spec;
    std::vector<long> counts(spec.classes, 0);
    long total = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        auto s = generate_scene(seed, spec);
        for (const auto& in : s.instances) {
            ++counts[in.class_id];
            ++total;
        }
    }
    double expected = static_cast<double>(total) / spec.classes;
    double chi2 = 0;
    for (long c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // chi-square with 4 dof: p > 0.01 iff statistic < 13.2767
    INFO("chi2 = " << chi2);
    CHECK(chi2 < 13.2767);
}

TEST_CASE("pose scenes carry analytic keypoints", "[data]") {
    SceneSpec spec;
    spec.task = Task::pose;
    spec.classes = 1;
    spec.max_distinct_classes = 1;
    spec.max_instances = 2;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto s = generate_scene(seed, spec);
        for (const auto& in : s.instances) {
            REQUIRE(in.keypoints.has_value());
            REQUIRE(in.keypoints->size() == 3);
            CHECK(in.keypoints->labeled_count() == 3);
            for (const auto& p : in.keypoints->points) {
                CHECK(p[0] >= in.box.xc - in.box.w / 2 - 1e-5f);
                CHECK(p[0] <= in.box.xc + in.box.w / 2 + 1e-5f);
                CHECK(p[1] >= in.box.yc - in.box.h / 2 - 1e-5f);
                CHECK(p[1] <= in.box.yc + in.box.h / 2 + 1e-5f);
            }
        }
    }
}

TEST_CASE("ppm round trip", "[data]") {
    auto s = generate_scene(7, SceneSpec{});
    std::string path = "test_roundtrip.ppm";
    write_ppm(path, s);
    auto back = read_ppm(path);
    CHECK(back.width == s.width);
    CHECK(back.height == s.height);
    CHECK(back.pixels == s.pixels);
    std::remove(path.c_str());

    CHECK_THROWS_AS(read_ppm("does_not_exist.ppm"), DataError);
}

TEST_CASE("coco export conventions", "[data]") {
    SceneSample s;
    s.width = s.height = 64;
    s.seed = 1;
    GroundTruthInstance inst;
    inst.class_id = 2;
    inst.box = {0.5f, 0.5f, 0.5f, 0.5f};
    inst.area = 0.25f;
    s.instances.push_back(inst);
    auto j = export_coco({s}, {"a", "b", "c"});
    auto bbox = j["annotations"][0]["bbox"];
    CHECK(bbox[0].get<double>() == Catch::Approx(16.0));
    CHECK(bbox[1].get<double>() == Catch::Approx(16.0));
    CHECK(bbox[2].get<double>() == Catch::Approx(32.0));
    CHECK(bbox[3].get<double>() == Catch::Approx(32.0));
    CHECK(j["annotations"][0]["category_id"].get<int>() == 3);
}

TEST_CASE("coco round trip preserves annotations", "[data]") {
    SceneSpec spec;
    std::vector<SceneSample> samples;
    for (std::uint64_t seed = 40; seed < 43; ++seed) samples.push_back(generate_scene(seed, spec));
    auto j = export_coco(samples, {"c0", "c1", "c2", "c3", "c4"});
    auto imported = import_coco(j);
    REQUIRE(imported.samples.size() == samples.size());
    REQUIRE(imported.categories.size() == 5);
    for (size_t i = 0; i < samples.size(); ++i) {
        REQUIRE(imported.samples[i].instances.size() == samples[i].instances.size());
        CHECK(imported.samples[i].seed == samples[i].seed);
        for (size_t k = 0; k < samples[i].instances.size(); ++k) {
            const auto& a = samples[i].instances[k];
            const auto& b = imported.samples[i].instances[k];
            CHECK(b.class_id == a.class_id);
            CHECK(b.box.xc == Catch::Approx(a.box.xc).margin(1e-6));
            CHECK(b.box.yc == Catch::Approx(a.box.yc).margin(1e-6));
            CHECK(b.box.w == Catch::Approx(a.box.w).margin(1e-6));
            CHECK(b.box.h == Catch::Approx(a.box.h).margin(1e-6));
            CHECK(b.area == Catch::Approx(a.area).margin(1e-6));
        }
    }
}

TEST_CASE("coco keypoint round trip and visibility mapping", "[data]") {
    SceneSpec spec;
    spec.task = Task::pose;
    spec.classes = 1;
    spec.max_distinct_classes = 1;
    auto s = generate_scene(5, spec);
    // exercise all three visibility flags
    REQUIRE(!s.instances.empty());
    REQUIRE(s.instances[0].keypoints.has_value());
    s.instances[0].keypoints->vis = {Visibility::invalid, Visibility::labeled_invisible,
                                     Visibility::labeled_visible};
    auto j = export_coco({s}, {"glyph"});
    CHECK(j["annotations"][0]["num_keypoints"].get<int>() == 2);
    auto imported = import_coco(j);
    const auto& ks = *imported.samples[0].instances[0].keypoints;
    CHECK(ks.vis[0] == Visibility::invalid);
    CHECK(ks.vis[1] == Visibility::labeled_invisible);
    CHECK(ks.vis[2] == Visibility::labeled_visible);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(ks.points[i][0] ==
              Catch::Approx(s.instances[0].keypoints->points[i][0]).margin(1e-6));
        CHECK(ks.points[i][1] ==
              Catch::Approx(s.instances[0].keypoints->points[i][1]).margin(1e-6));
    }
}

TEST_CASE("coco import errors", "[data]") {
    // malformed JSON reports a byte offset
    std::string path = "bad.json";
    {
        std::ofstream f(path);
        f << "{ \"images\": [ oops";
    }
    try {
        import_coco_file(path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    std::remove(path.c_str());

    // missing required key is named
    nlohmann::json j{{"images", nlohmann::json::array()},
                     {"annotations", nlohmann::json::array()}};
    try {
        import_coco(j);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("categories") != std::string::npos);
    }
}

TEST_CASE("config parse and serialize round trip", "[data]") {
    std::istringstream in(
        "task=pose\nK=1\nKprime=1\nJ=3\nmax_instances=2\n# comment\nlr=0.002\nhead=mlp\n");
    auto c = parse_config(in);
    CHECK(c.task == Task::pose);
    CHECK(c.K == 1);
    CHECK(c.head == HeadKind::mlp);
    CHECK(c.lr == Catch::Approx(0.002f));
    CHECK(c.sequence_len() == 10);

    std::istringstream back(serialize_config(c));
    auto c2 = parse_config(back);
    CHECK(c2.task == c.task);
    CHECK(c2.lr == c.lr);
    CHECK(c2.N == c.N);

    std::istringstream bad("nonsense_key=1\n");
    CHECK_THROWS_AS(parse_config(bad), DataError);
    std::istringstream badv("Kprime=9\nK=5\n");
    CHECK_THROWS_AS(parse_config(badv), ContractError);
}
