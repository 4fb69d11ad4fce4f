#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "smre/smre.hpp"

using smre::Shape;
using smre::Tensor;

namespace {

std::vector<double> random_vec(std::mt19937& rng, std::size_t n, double lo = -1.0,
                               double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("factories build the advertised shapes", "[tensor]") {
    auto z = Tensor<float>::zeros({2, 3});
    REQUIRE(z.shape() == Shape{2, 3});
    REQUIRE(z.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(z.data()[i] == 0.0f);

    auto f = Tensor<float>::full({4}, 2.5f);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(f.data()[i] == 2.5f);

    auto s = Tensor<float>::scalar(7.0f);
    REQUIRE(s.shape() == Shape{1});
    REQUIRE(s.item() == 7.0f);

    REQUIRE_THROWS_AS(Tensor<float>::from({2, 2}, {1.0f, 2.0f}), smre::DimensionError);
    REQUIRE_THROWS_AS(z.item(), smre::ContractError);
}

TEST_CASE("matmul matches a hand-multiplied example", "[tensor]") {
    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from({2, 1}, {5, 6});
    auto c = smre::matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 1});
    REQUIRE(c.data()[0] == 17.0);
    REQUIRE(c.data()[1] == 39.0);

    auto bad = Tensor<double>::zeros({3, 2});
    REQUIRE_THROWS_AS(smre::matmul(a, bad), smre::DimensionError);
}

TEST_CASE("matmul backward produces the transpose products", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from({2, 1}, {5, 6});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto loss = smre::sum_all(smre::matmul(a, b));
    tape.backward(loss);
    // dA = g B^T with g all ones, dB = A^T g
    REQUIRE(a.grad() == std::vector<double>{5, 6, 5, 6});
    REQUIRE(b.grad() == std::vector<double>{4, 6});
}

TEST_CASE("square has gradient two x", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto x = Tensor<double>::from({3}, {1.5, -2.0, 0.0});
    x.set_requires_grad(true);
    auto loss = smre::sum_all(smre::square(x));
    tape.backward(loss);
    REQUIRE(x.grad() == std::vector<double>{3.0, -4.0, 0.0});
}

TEST_CASE("relu takes the zero branch exactly at the kink", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto x = Tensor<double>::from({3}, {-1.0, 0.0, 2.0});
    x.set_requires_grad(true);
    auto loss = smre::sum_all(smre::relu(x));
    tape.backward(loss);
    REQUIRE(loss.item() == 2.0);
    REQUIRE(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("tanh and sigmoid match closed-form values and derivatives", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto x = Tensor<double>::from({2}, {0.0, 0.7});
    x.set_requires_grad(true);
    auto t = smre::tanh(x);
    auto s = smre::sigmoid(x);
    REQUIRE(t.data()[0] == 0.0);
    REQUIRE(s.data()[0] == 0.5);
    REQUIRE(std::abs(t.data()[1] - std::tanh(0.7)) < 1e-15);
    REQUIRE(std::abs(s.data()[1] - 1.0 / (1.0 + std::exp(-0.7))) < 1e-15);

    auto loss = smre::sum_all(t + s);
    tape.backward(loss);
    for (std::size_t i = 0; i < 2; ++i) {
        double tv = t.data()[i];
        double sv = s.data()[i];
        REQUIRE(std::abs(x.grad()[i] - ((1.0 - tv * tv) + sv * (1.0 - sv))) < 1e-14);
    }
}

TEST_CASE("gradients accumulate across multiple uses of a tensor", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto x = Tensor<double>::from({2}, {3.0, -1.0});
    x.set_requires_grad(true);
    auto loss = smre::sum_all(x + x);
    tape.backward(loss);
    REQUIRE(x.grad() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("backward clears the tape so scopes can be reused", "[tensor]") {
    smre::Tape<double> tape;
    for (int round = 0; round < 2; ++round) {
        smre::Tape<double>::Scope scope(tape);
        auto x = Tensor<double>::from({2}, {1.0, 2.0});
        x.set_requires_grad(true);
        auto loss = smre::sum_all(smre::square(x));
        tape.backward(loss);
        REQUIRE(x.grad() == std::vector<double>{2.0, 4.0});
    }
}

TEST_CASE("detached tensors stop gradient flow", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto x = Tensor<double>::from({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    auto frozen = smre::square(x).detached();
    auto loss = smre::sum_all(frozen * x);
    tape.backward(loss);
    // only the direct x factor contributes, the squared branch is cut
    REQUIRE(x.grad() == std::vector<double>{1.0, 4.0});
}

TEST_CASE("reshape shares storage and routes gradients through", "[tensor]") {
    smre::Tape<double> tape;
    smre::Tape<double>::Scope scope(tape);
    auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    x.set_requires_grad(true);
    auto flat = x.reshaped({6});
    REQUIRE(flat.data() == x.data());
    REQUIRE_THROWS_AS(x.reshaped({4}), smre::DimensionError);
    auto loss = smre::sum_all(smre::square(flat));
    tape.backward(loss);
    REQUIRE(x.grad() == std::vector<double>{2, 4, 6, 8, 10, 12});
}

TEST_CASE("empty grad buffers read as zero", "[tensor]") {
    auto x = Tensor<double>::zeros({3});
    x.set_requires_grad(true);
    REQUIRE(x.grad().empty());
    std::vector<double> g{1.0, 2.0, 3.0};
    x.accumulate_grad(g.data(), g.size());
    x.accumulate_grad(g.data(), g.size());
    REQUIRE(x.grad() == std::vector<double>{2.0, 4.0, 6.0});
    x.zero_grad();
    REQUIRE(x.grad().empty());
}

TEST_CASE("softmax rows sum to one and shift invariance holds", "[tensor]") {
    std::mt19937 rng(123);
    auto vals = random_vec(rng, 15, -4.0, 4.0);
    auto x = Tensor<double>::from({3, 5}, vals);
    auto p = smre::softmax_lastdim(x);
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            double v = p.data()[r * 5 + c];
            REQUIRE(v > 0.0);
            s += v;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-12);
    }

    auto shifted_vals = vals;
    for (auto& v : shifted_vals) v += 37.5;
    auto p2 = smre::softmax_lastdim(Tensor<double>::from({3, 5}, shifted_vals));
    for (std::size_t i = 0; i < 15; ++i) REQUIRE(std::abs(p.data()[i] - p2.data()[i]) < 1e-12);

    // the scale argument must equal softmax of the pre-scaled input
    auto scaled_vals = vals;
    for (auto& v : scaled_vals) v *= 10.0;
    auto a = smre::softmax_lastdim(x, 10.0);
    auto b = smre::softmax_lastdim(Tensor<double>::from({3, 5}, scaled_vals));
    for (std::size_t i = 0; i < 15; ++i) REQUIRE(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
}

TEST_CASE("elementwise and scalar ops check out against finite differences", "[tensor]") {
    std::mt19937 rng(7);
    smre::ModelParams<double> params;
    params.add("a", Tensor<double>::from({2, 3}, random_vec(rng, 6)));
    params.add("b", Tensor<double>::from({2, 3}, random_vec(rng, 6)));
    params.add("w", Tensor<double>::from({3, 2}, random_vec(rng, 6)));

    auto f = [](smre::ModelParams<double>& p) {
        auto& a = p.at("a");
        auto& b = p.at("b");
        auto& w = p.at("w");
        auto h = smre::tanh(a * b + smre::rsub_scalar(0.5, a));
        auto y = smre::matmul(h, w);
        auto z = smre::sigmoid(y) + smre::square(y) + smre::relu(smre::neg(y));
        return smre::mean_all(z + smre::scale(smre::add_scalar(z, 1.0), 0.25));
    };
    auto report = smre::finite_diff_check(f, params);
    INFO(report.to_string());
    REQUIRE(report.passes(1e-6));
}

TEST_CASE("reductions and softmax check out against finite differences", "[tensor]") {
    std::mt19937 rng(11);
    smre::ModelParams<double> params;
    params.add("x", Tensor<double>::from({4, 5}, random_vec(rng, 20, -2.0, 2.0)));

    auto f = [](smre::ModelParams<double>& p) {
        auto& x = p.at("x");
        auto probs = smre::softmax_lastdim(x, 3.0);
        auto mixed = probs * smre::square(x);
        return smre::sum_all(mixed) + smre::mean_all(x);
    };
    auto report = smre::finite_diff_check(f, params);
    INFO(report.to_string());
    REQUIRE(report.passes(1e-6));
}

TEST_CASE("matmul gradient holds over random rectangular shapes", "[tensor]") {
    std::mt19937 rng(21);
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    for (int trial = 0; trial < 5; ++trial) {
        std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        smre::ModelParams<double> params;
        params.add("a", Tensor<double>::from({m, k}, random_vec(rng, m * k)));
        params.add("b", Tensor<double>::from({k, n}, random_vec(rng, k * n)));
        auto f = [](smre::ModelParams<double>& p) {
            return smre::mean_all(smre::square(smre::matmul(p.at("a"), p.at("b"))));
        };
        auto report = smre::finite_diff_check(f, params);
        INFO("shape " << m << "x" << k << "x" << n << "\n" << report.to_string());
        REQUIRE(report.passes(1e-6));
    }
}

TEST_CASE("finite_diff_check flags a wrong gradient", "[tensor]") {
    smre::ModelParams<double> params;
    params.add("x", Tensor<double>::from({2}, {0.3, -0.4}));
    // forward computes x^2 but the tape sees only a linear term, so the
    // analytic gradient disagrees with the numeric one
    auto f = [](smre::ModelParams<double>& p) {
        auto& x = p.at("x");
        auto lin = smre::sum_all(x);
        auto sq = smre::sum_all(smre::square(x.detached()));
        return lin + sq;
    };
    auto report = smre::finite_diff_check(f, params);
    REQUIRE_FALSE(report.passes(1e-4));
}

TEST_CASE("adam first step moves each coordinate by about lr", "[tensor]") {
    smre::ModelParams<float> params;
    params.add("w", Tensor<float>::from({3}, {0.5f, -0.2f, 1.0f}));
    auto opt = smre::AdamState<float>::init(params);

    std::vector<float> before(params.at("w").data(), params.at("w").data() + 3);
    std::vector<float> g{0.7f, -1.3f, 0.01f};
    params.at("w").accumulate_grad(g.data(), g.size());
    smre::adam_step(params, opt, 1e-3f);

    REQUIRE(opt.step == 1);
    for (std::size_t i = 0; i < 3; ++i) {
        float delta = before[i] - params.at("w").data()[i];
        float expect = std::copysign(1e-3f, g[i]);
        REQUIRE(std::abs(delta - expect) < 1e-6f);
    }
}

TEST_CASE("adam with zero learning rate freezes parameters", "[tensor]") {
    smre::ModelParams<float> params;
    params.add("w", Tensor<float>::from({2}, {0.25f, -0.75f}));
    auto opt = smre::AdamState<float>::init(params);
    std::vector<float> before(params.at("w").data(), params.at("w").data() + 2);
    std::vector<float> g{1.0f, 2.0f};
    params.at("w").accumulate_grad(g.data(), g.size());
    smre::adam_step(params, opt, 0.0f);
    REQUIRE(std::memcmp(before.data(), params.at("w").data(), 2 * sizeof(float)) == 0);
    REQUIRE(opt.step == 1);
    REQUIRE(opt.m[0][0] != 0.0f);  // moments still advance
}

TEST_CASE("adam matches a two-step scalar hand computation", "[tensor]") {
    smre::ModelParams<double> params;
    params.add("w", Tensor<double>::scalar(1.0));
    auto opt = smre::AdamState<double>::init(params);

    double w = 1.0, m = 0.0, v = 0.0;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> grads{0.4, -0.6};
    for (int t = 1; t <= 2; ++t) {
        double g = grads[t - 1];
        params.at("w").zero_grad();
        params.at("w").accumulate_grad(&g, 1);
        smre::adam_step(params, opt, lr);

        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, t));
        double vh = v / (1 - std::pow(b2, t));
        w -= lr * mh / (std::sqrt(vh) + eps);
        REQUIRE(std::abs(params.at("w").item() - w) < 1e-14);
    }
}

TEST_CASE("global norm clipping rescales only above the threshold", "[tensor]") {
    smre::ModelParams<double> params;
    params.add("w", Tensor<double>::from({2}, {0.0, 0.0}));
    std::vector<double> g{3.0, 4.0};
    params.at("w").accumulate_grad(g.data(), g.size());

    double norm = smre::clip_global_norm(params, 1.0);
    REQUIRE(std::abs(norm - 5.0) < 1e-12);
    REQUIRE(std::abs(params.at("w").grad()[0] - 0.6) < 1e-12);
    REQUIRE(std::abs(params.at("w").grad()[1] - 0.8) < 1e-12);

    params.at("w").zero_grad();
    params.at("w").accumulate_grad(g.data(), g.size());
    double norm2 = smre::clip_global_norm(params, 10.0);
    REQUIRE(std::abs(norm2 - 5.0) < 1e-12);
    REQUIRE(params.at("w").grad() == std::vector<double>{3.0, 4.0});
}

TEST_CASE("cross entropy agrees with a log-sum-exp hand calculation", "[tensor]") {
    auto logits = Tensor<double>::from({2, 3}, {1.0, 2.0, 3.0, 0.5, 0.5, 0.5});
    std::vector<int> targets{1, 2};
    std::vector<std::uint8_t> mask{1, 1};
    auto loss = smre::cross_entropy_masked(logits, targets, mask);

    double lse0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    double expected = 0.5 * ((lse0 - 2.0) + std::log(3.0));
    REQUIRE(std::abs(loss.item() - expected) < 1e-12);

    // masked positions drop out of the mean entirely
    std::vector<std::uint8_t> mask2{1, 0};
    auto loss2 = smre::cross_entropy_masked(logits, targets, mask2);
    REQUIRE(std::abs(loss2.item() - (lse0 - 2.0)) < 1e-12);
}

TEST_CASE("cross entropy gradient passes finite differences", "[tensor]") {
    std::mt19937 rng(31);
    smre::ModelParams<double> params;
    params.add("logits", Tensor<double>::from({3, 4}, random_vec(rng, 12, -2.0, 2.0)));
    std::vector<int> targets{2, 0, 3};
    std::vector<std::uint8_t> mask{1, 1, 0};
    auto f = [&](smre::ModelParams<double>& p) {
        return smre::cross_entropy_masked(p.at("logits"), targets, mask);
    };
    auto report = smre::finite_diff_check(f, params);
    INFO(report.to_string());
    REQUIRE(report.passes(1e-6));
}

TEST_CASE("structured ops route gradients correctly", "[tensor]") {
    std::mt19937 rng(41);
    smre::ModelParams<double> params;
    params.add("x", Tensor<double>::from({3, 4}, random_vec(rng, 12)));
    params.add("y", Tensor<double>::from({3, 2}, random_vec(rng, 6)));
    params.add("table", Tensor<double>::from({5, 3}, random_vec(rng, 15)));

    auto f = [](smre::ModelParams<double>& p) {
        auto& x = p.at("x");
        auto cat = smre::concat_cols<double>({x, p.at("y")});
        auto left = smre::slice_cols(cat, 0, 3);
        auto rows = smre::gather2d(cat, {0, 2, 1}, {5, 0, 3});
        auto emb = smre::embed_rows(p.at("table"), {4, 0, 4});
        auto mix = left + emb;
        return smre::mean_all(smre::square(mix)) + smre::sum_all(smre::square(rows));
    };
    auto report = smre::finite_diff_check(f, params);
    INFO(report.to_string());
    REQUIRE(report.passes(1e-6));
}

TEST_CASE("temporal ops route gradients correctly", "[tensor]") {
    std::mt19937 rng(43);
    smre::ModelParams<double> params;
    params.add("v", Tensor<double>::from({2, 3, 4}, random_vec(rng, 24)));
    params.add("q", Tensor<double>::from({2, 4}, random_vec(rng, 8)));
    params.add("w", Tensor<double>::from({2, 3}, random_vec(rng, 6)));

    auto f = [](smre::ModelParams<double>& p) {
        auto& v = p.at("v");
        auto pooled = smre::pool_temporal(v);
        auto bumped = smre::add_time_broadcast(v, p.at("q"));
        auto weights = smre::softmax_lastdim(p.at("w"));
        auto ctx = smre::attend(v, weights);
        auto stacked = smre::stack_time<double>({pooled, ctx});
        return smre::mean_all(smre::square(stacked)) + smre::mean_all(smre::square(bumped));
    };
    auto report = smre::finite_diff_check(f, params);
    INFO(report.to_string());
    REQUIRE(report.passes(1e-6));
}

TEST_CASE("pool_temporal averages over the time axis", "[tensor]") {
    auto v = Tensor<double>::from({1, 2, 3}, {1, 2, 3, 5, 6, 7});
    auto pooled = smre::pool_temporal(v);
    REQUIRE(pooled.shape() == Shape{1, 3});
    REQUIRE(pooled.data()[0] == 3.0);
    REQUIRE(pooled.data()[1] == 4.0);
    REQUIRE(pooled.data()[2] == 5.0);
}

TEST_CASE("masked_mean_time ignores padded steps", "[tensor]") {
    auto v = Tensor<double>::from({1, 3, 2}, {1, 2, 3, 4, 100, 200});
    std::vector<std::uint8_t> mask{1, 1, 0};
    auto m = smre::masked_mean_time(v, mask);
    REQUIRE(m.shape() == Shape{1, 2});
    REQUIRE(m.data()[0] == 2.0);
    REQUIRE(m.data()[1] == 3.0);
}

TEST_CASE("cosine similarity matrix matches a direct recompute", "[tensor]") {
    std::mt19937 rng(51);
    std::size_t n = 4, d = 6;
    auto av = random_vec(rng, n * d);
    auto bv = random_vec(rng, n * d);
    auto sim = smre::cosine_similarity_matrix(Tensor<double>::from({n, d}, av),
                                              Tensor<double>::from({n, d}, bv));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0, na = 0, nb = 0;
            for (std::size_t k = 0; k < d; ++k) {
                dot += av[i * d + k] * bv[j * d + k];
                na += av[i * d + k] * av[i * d + k];
                nb += bv[j * d + k] * bv[j * d + k];
            }
            double want = dot / (std::sqrt(na) * std::sqrt(nb));
            REQUIRE(std::abs(sim.data()[i * n + j] - want) < 1e-12);
        }
    }
}

TEST_CASE("cosine similarity rejects a zero row", "[tensor]") {
    auto a = Tensor<double>::from({2, 2}, {1, 0, 0, 0});
    auto b = Tensor<double>::from({2, 2}, {1, 1, 1, 1});
    REQUIRE_THROWS_AS(smre::cosine_similarity_matrix(a, b), smre::DegenerateInputError);
}

TEST_CASE("cosine gradients pass finite differences", "[tensor]") {
    std::mt19937 rng(61);
    smre::ModelParams<double> params;
    params.add("a", Tensor<double>::from({3, 5}, random_vec(rng, 15, 0.2, 1.0)));
    params.add("b", Tensor<double>::from({3, 5}, random_vec(rng, 15, 0.2, 1.0)));
    auto f = [](smre::ModelParams<double>& p) {
        auto m = smre::cosine_similarity_matrix(p.at("a"), p.at("b"));
        auto d = smre::cosine_pairs(p.at("a"), p.at("b"));
        return smre::mean_all(smre::square(m)) + smre::mean_all(d);
    };
    auto report = smre::finite_diff_check(f, params);
    INFO(report.to_string());
    REQUIRE(report.passes(1e-6));
}

TEST_CASE("params_hash is order and value sensitive", "[tensor]") {
    smre::ModelParams<float> a;
    a.add("w", Tensor<float>::from({2}, {1.0f, 2.0f}));
    smre::ModelParams<float> b;
    b.add("w", Tensor<float>::from({2}, {1.0f, 2.0f}));
    REQUIRE(smre::params_hash(a) == smre::params_hash(b));

    b.at("w").mutable_data()[1] = 2.5f;
    REQUIRE(smre::params_hash(a) != smre::params_hash(b));

    smre::ModelParams<float> c;
    c.add("v", Tensor<float>::from({2}, {1.0f, 2.0f}));
    REQUIRE(smre::params_hash(a) != smre::params_hash(c));
}
