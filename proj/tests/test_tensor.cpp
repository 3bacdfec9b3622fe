#include <catch2/catch_amalgamated.hpp>

#include "obj2seq/grad_check.hpp"
#include "obj2seq/tensor.hpp"

using namespace obj2seq;

namespace {

template <class T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, T scale = T(1)) {
    auto t = TensorT<T>::zeros(shape);
    for (auto& v : t.mutable_values()) v = static_cast<T>(rng.normal()) * scale;
    return t;
}

using DTensor = TensorT<double>;

}  // namespace

TEST_CASE("matmul forward values", "[tensor]") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto c = matmul(a, eye);
    CHECK(c.values() == std::vector<float>{1, 2, 3, 4});

    auto u = Tensor::from_data({1, 2}, {1, 2});
    auto v = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(u, v).item() == 11.0f);
}

TEST_CASE("matmul shape mismatch names both shapes", "[tensor]") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul backward equals column sums of b for sum(a*b)", "[tensor]") {
    Rng rng(7);
    auto a = random_tensor<float>({3, 4}, rng);
    auto b = random_tensor<float>({4, 2}, rng);
    a.set_requires_grad(true);
    auto loss = sum(matmul(a, b));
    loss.backward();
    // dL/da_ik = sum_j b_kj
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            float colsum = b.at(k, 0) + b.at(k, 1);
            CHECK(a.grad()[static_cast<size_t>(i) * 4 + k] == Catch::Approx(colsum).epsilon(1e-6));
        }
}

TEST_CASE("softmax values and shift invariance", "[tensor]") {
    auto x = Tensor::from_data({2}, {0, 0});
    auto y = softmax(x, 0);
    CHECK(y.at(0) == Catch::Approx(0.5));
    CHECK(y.at(1) == Catch::Approx(0.5));

    auto x2 = Tensor::from_data({2}, {std::log(2.0f), 0.0f});
    auto y2 = softmax(x2, 0);
    CHECK(y2.at(0) == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(y2.at(1) == Catch::Approx(1.0 / 3.0).epsilon(1e-6));

    Rng rng(3);
    auto z = random_tensor<float>({5}, rng);
    auto shifted = add_const(z, 3.25f);
    auto s1 = softmax(z, 0), s2 = softmax(shifted, 0);
    for (int i = 0; i < 5; ++i) CHECK(s1.at(i) == Catch::Approx(s2.at(i)).epsilon(1e-5));
}

TEST_CASE("softmax rejects non-finite input", "[tensor]") {
    auto x = Tensor::from_data({2}, {std::numeric_limits<float>::infinity(), 0.0f});
    CHECK_THROWS_AS(softmax(x, 0), NumericError);
}

TEST_CASE("shared subexpressions accumulate gradients", "[tensor]") {
    auto x = Tensor::scalar(1.5f, true);
    auto y = add(x, x);
    y.backward();
    CHECK(x.grad()[0] == 2.0f);
}

TEST_CASE("forward is deterministic", "[tensor]") {
    Rng rng(11);
    auto a = random_tensor<float>({64, 32}, rng);
    auto b = random_tensor<float>({32, 48}, rng);
    auto c1 = matmul(a, b);
    auto c2 = matmul(a, b);
    CHECK(c1.values() == c2.values());
}

TEST_CASE("grad_check sigmoid at zero is exactly 1/4", "[tensor]") {
    std::vector<DTensor> in{DTensor::scalar(0.0)};
    auto rep = grad_check<double>(
        [](std::vector<DTensor>& xs) { return sum(sigmoid(xs[0])); }, in, 1e-4);
    CHECK(rep.passed(1e-3));
    in[0].zero_grad();
    auto out = sigmoid(in[0]);
    out.backward();
    CHECK(in[0].grad()[0] == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("grad_check rejects non-scalar objective", "[tensor]") {
    std::vector<DTensor> in{DTensor::from_data({2}, {0.1, 0.2})};
    CHECK_THROWS_AS(grad_check<double>(
                        [](std::vector<DTensor>& xs) { return sigmoid(xs[0]); }, in, 1e-4),
                    ContractError);
}

TEST_CASE("primitive gradient suite", "[tensor][gradsuite]") {
    Rng rng(101);
    auto check = [&](const char* name,
                     std::function<DTensor(std::vector<DTensor>&)> f,
                     std::vector<std::vector<int>> shapes, double scale = 1.0) {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<DTensor> inputs;
            for (auto& s : shapes) inputs.push_back(random_tensor<double>(s, rng, scale));
            auto rep = grad_check<double>(f, inputs, 1e-4);
            INFO(name << " trial " << trial << " worst " << rep.worst);
            CHECK(rep.max_rel_error < 1e-3);
        }
    };

    check("matmul",
          [](std::vector<DTensor>& xs) { return sum(matmul(xs[0], xs[1])); },
          {{3, 4}, {4, 2}});
    check("add",
          [](std::vector<DTensor>& xs) { return sum(mul(add(xs[0], xs[1]), xs[0])); },
          {{2, 3}, {2, 3}});
    check("mul",
          [](std::vector<DTensor>& xs) { return sum(mul(xs[0], xs[1])); }, {{2, 3}, {2, 3}});
    check("sigmoid",
          [](std::vector<DTensor>& xs) { return sum(sigmoid(xs[0])); }, {{4, 3}});
    check("softmax",
          [](std::vector<DTensor>& xs) {
              auto w = DTensor::from_data({3, 1}, {0.3, -1.2, 2.0});
              return sum(matmul(softmax(xs[0], 1), w));
          },
          {{4, 3}});
    check("layernorm",
          [](std::vector<DTensor>& xs) {
              return sum(mul(layernorm(xs[0], xs[1], xs[2]), xs[0]));
          },
          {{3, 5}, {5}, {5}});
    check("linear",
          [](std::vector<DTensor>& xs) { return sum(sigmoid(linear(xs[0], xs[1], xs[2]))); },
          {{3, 4}, {4, 2}, {2}});
    check("attention",
          [](std::vector<DTensor>& xs) { return sum(attention(xs[0], xs[1], xs[2])); },
          {{2, 4}, {5, 4}, {5, 3}});
    check("rowwise_dot",
          [](std::vector<DTensor>& xs) { return sum(sigmoid(rowwise_dot(xs[0], xs[1]))); },
          {{3, 4}, {3, 4}});
    check("gather_scale",
          [](std::vector<DTensor>& xs) {
              auto g = gather_rows(xs[0], {1, 0, 1});
              return sum(scale_rows(g, rowwise_dot(xs[1], xs[1])));
          },
          {{2, 3}, {3, 3}});
}
