#include <acot/rng.hpp>
#include <acot/tensor.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace acot;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    Tensor t(shape);
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

// Runs `build` under a fresh tape, backprops the scalar result, and compares
// every input's analytic gradient against central finite differences computed
// by re-evaluating the forward pass with perturbed values.
void check_grads(uint64_t seed, const std::vector<Shape>& shapes,
                 const std::function<Tensor(std::vector<Tensor>&)>& build, double tol = 1e-5,
                 const char* tag = "") {
    Rng rng(seed);
    std::vector<Tensor> inputs;
    for (const auto& s : shapes) inputs.push_back(random_tensor(rng, s));

    std::vector<Tensor> tracked;
    for (auto& t : inputs) tracked.push_back(Tensor(t.shape(), t.values()).set_requires_grad());
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor root = build(tracked);
        REQUIRE(root.numel() == 1);
        backward(root);
    }

    for (size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const std::vector<double>& flat) {
            NoGradScope off;
            std::vector<Tensor> probe;
            for (size_t j = 0; j < inputs.size(); ++j) {
                probe.push_back(j == i ? Tensor(inputs[j].shape(), flat)
                                       : Tensor(inputs[j].shape(), inputs[j].values()));
            }
            return build(probe).item();
        };
        const auto fd = oracle::fd_grad(inputs[i].values(), f, 1e-6);
        const auto& an = tracked[i].has_grad() ? tracked[i].grad()
                                               : std::vector<double>(inputs[i].numel(), 0.0);
        INFO(tag << " seed " << seed << " input " << i);
        REQUIRE(oracle::max_rel_err(fd, an) < tol);
    }
}

// Weighted reduction to a scalar so gradients are non-degenerate.
Tensor reduce(const Tensor& x, uint64_t seed) {
    Rng rng(seed ^ 0x9e37u);
    Tensor w = random_tensor(rng, x.shape());
    return sum(mul(x, w));
}

}  // namespace

TEST_CASE("softmax worked examples") {
    Tensor x({1, 2}, {0.0, 0.0});
    Tensor y = softmax_rows(x);
    CHECK(y.values()[0] == 0.5);
    CHECK(y.values()[1] == 0.5);

    const int M = 7;
    Tensor eq({1, M}, std::vector<double>(M, 3.25));
    Tensor u = softmax_rows(eq);
    for (int i = 0; i < M; ++i) CHECK(u.values()[i] == Catch::Approx(1.0 / M).margin(1e-15));
}

TEST_CASE("masked_fill drives softmax mass to zero") {
    Tensor x({1, 2}, {1.0, 2.0});
    Tensor filled = masked_fill(x, {0, 1}, -1e9);
    CHECK(filled.values()[0] == 1.0);
    CHECK(filled.values()[1] == -1e9);
    Tensor y = softmax_rows(filled);
    CHECK(y.values()[0] == 1.0);  // exp(-1e9 - 1) underflows to exactly 0
    CHECK(y.values()[1] == 0.0);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {8, 16}, -30.0, 30.0);
    Tensor y = softmax_rows(x);
    for (int r = 0; r < 8; ++r) {
        double s = 0.0;
        for (int c = 0; c < 16; ++c) s += y.at(r, c);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("product rule: x*y at x=3 y=4") {
    Tensor x({1}, {3.0});
    Tensor y({1}, {4.0});
    x.set_requires_grad();
    y.set_requires_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor z = mul(x, y);
    backward(z);
    CHECK(x.grad()[0] == 4.0);
    CHECK(y.grad()[0] == 3.0);
}

TEST_CASE("log softmax pick matches finite differences") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const int i = static_cast<int>(seed % 5);
        check_grads(seed + 1000, {{1, 5}}, [i](std::vector<Tensor>& in) {
            return pick(log(softmax_rows(in[0])), {0}, {i});
        });
    }
}

TEST_CASE("constant root leaves parameter grads untouched") {
    Tensor w({2, 2}, {1.0, 2.0, 3.0, 4.0});
    w.set_requires_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor c = Tensor::scalar(5.0);
    backward(c);
    CHECK_FALSE(w.has_grad());
}

TEST_CASE("non-scalar backward root rejected") {
    Tape tape;
    TapeScope scope(tape);
    Tensor x({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK_THROWS_WITH(backward(x), Catch::Matchers::ContainsSubstring("[2,2]"));
}

TEST_CASE("shape mismatch errors name both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 5});
    CHECK_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                        Catch::Matchers::ContainsSubstring("[4,5]"));
    CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                     Catch::Matchers::ContainsSubstring("[4,5]"));
}

TEST_CASE("every primitive passes the finite-difference property test") {
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        check_grads(seed, {{3, 4}, {4, 2}}, [&](std::vector<Tensor>& in) {
            return reduce(matmul(in[0], in[1]), seed);
        }, 1e-5, "matmul");
        check_grads(seed, {{3, 4}, {5, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(matmul_nt(in[0], in[1]), seed);
        }, 1e-5, "matmul_nt");
        check_grads(seed, {{3, 4}, {3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(add(in[0], in[1]), seed);
        }, 1e-5, "add");
        check_grads(seed, {{3, 4}, {3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(sub(in[0], in[1]), seed);
        }, 1e-5, "sub");
        check_grads(seed, {{3, 4}, {3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(mul(in[0], in[1]), seed);
        }, 1e-5, "mul");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(scale(in[0], -1.7), seed);
        }, 1e-5, "scale");
        check_grads(seed, {{3, 4}, {4}}, [&](std::vector<Tensor>& in) {
            return reduce(add_rowvec(in[0], in[1]), seed);
        }, 1e-5, "add_rowvec");
        check_grads(seed, {{3, 5}}, [&](std::vector<Tensor>& in) {
            return reduce(softmax_rows(in[0]), seed);
        }, 1e-5, "softmax_rows");
        check_grads(seed, {{3, 5}}, [&](std::vector<Tensor>& in) {
            return reduce(log_softmax_rows(in[0]), seed);
        }, 1e-5, "log_softmax_rows");
        check_grads(seed, {{3, 6}, {6}, {6}}, [&](std::vector<Tensor>& in) {
            return reduce(layer_norm_rows(in[0], in[1], in[2]), seed);
        }, 1e-5, "layer_norm_rows");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            // shift positive before log
            Tensor shifted = add(mul(in[0], in[0]), Tensor(in[0].shape(), 0.5));
            return reduce(acot::log(shifted), seed);
        }, 1e-5, "log");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(acot::exp(in[0]), seed);
        }, 1e-5, "exp");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(gelu(in[0]), seed);
        }, 1e-5, "gelu");
        check_grads(seed, {{5, 3}}, [&](std::vector<Tensor>& in) {
            return reduce(gather_rows(in[0], {0, 2, 2, 4}), seed);
        }, 1e-5, "gather_rows");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            // moderate fill keeps the sum reduction conditioned for FD; the
            // gradient-blocking semantics do not depend on the fill value
            std::vector<uint8_t> mask(12, 0);
            Rng mrng(seed);
            for (auto& m : mask) m = mrng.below(2) ? 1 : 0;
            return reduce(masked_fill(in[0], mask, -3.0), seed);
        }, 1e-5, "masked_fill");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            // attention-style use: -1e9 fill followed by row softmax
            std::vector<uint8_t> mask(12, 0);
            Rng mrng(seed + 7);
            for (auto& m : mask) m = mrng.below(3) == 0 ? 1 : 0;
            for (int r = 0; r < 3; ++r) mask[static_cast<size_t>(r) * 4] = 0;
            return reduce(softmax_rows(masked_fill(in[0], mask, -1e9)), seed);
        }, 1e-5, "masked_fill+softmax");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) {
            return sum(pick(in[0], {0, 1, 2, 2}, {3, 0, 1, 1}));
        }, 1e-5, "pick");
        check_grads(seed, {{3, 4}}, [&](std::vector<Tensor>& in) { return sum(in[0]); },
                    1e-5, "sum");
        check_grads(seed, {{3, 6}}, [&](std::vector<Tensor>& in) {
            return reduce(slice_cols(in[0], 1, 3), seed);
        }, 1e-5, "slice_cols");
        check_grads(seed, {{5, 3}}, [&](std::vector<Tensor>& in) {
            return reduce(slice_rows(in[0], 1, 3), seed);
        }, 1e-5, "slice_rows");
        check_grads(seed, {{2, 4}, {3, 4}}, [&](std::vector<Tensor>& in) {
            return reduce(concat_rows({in[0], in[1]}), seed);
        }, 1e-5, "concat_rows");
        check_grads(seed, {{3, 2}, {3, 3}}, [&](std::vector<Tensor>& in) {
            return reduce(concat_cols({in[0], in[1]}), seed);
        }, 1e-5, "concat_cols");
    }
}

TEST_CASE("backward is deterministic for identical tapes") {
    auto run = [] {
        Rng rng(77);
        Tensor a = random_tensor(rng, {4, 6});
        Tensor b = random_tensor(rng, {6, 3});
        a.set_requires_grad();
        b.set_requires_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor h = gelu(matmul(a, b));
        backward(sum(mul(h, h)));
        auto ga = a.grad();
        auto gb = b.grad();
        ga.insert(ga.end(), gb.begin(), gb.end());
        return ga;
    };
    auto g1 = run();
    auto g2 = run();
    REQUIRE(g1.size() == g2.size());
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
