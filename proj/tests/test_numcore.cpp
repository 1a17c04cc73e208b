#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "wgpt/graph.hpp"
#include "wgpt/optim.hpp"

using namespace wgpt;
using wgpt::test::gradcheck;
using wgpt::test::make_tensor;
using wgpt::test::random_tensor;

TEST(Matmul, IdentityTimesAnything) {
    Tape tape(false);
    Ref eye = tape.input(make_tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    Rng rng(7);
    Tensor b = random_tensor({3, 5}, rng);
    Ref r = tape.matmul(eye, tape.input(Tensor(b)));
    for (std::int64_t i = 0; i < b.numel(); ++i) EXPECT_DOUBLE_EQ(tape.value(r)[i], b[i]);
}

TEST(Matmul, HandArithmetic) {
    Tape tape(false);
    Ref a = tape.input(make_tensor({2, 2}, {1, 2, 3, 4}));
    Ref b = tape.input(make_tensor({2, 1}, {1, 1}));
    Ref r = tape.matmul(a, b);
    EXPECT_DOUBLE_EQ(tape.value(r).at(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(tape.value(r).at(1, 0), 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tape tape(false);
    Ref a = tape.input(Tensor({4, 5}));
    Ref b = tape.input(Tensor({3, 2}));
    try {
        tape.matmul(a, b);
        FAIL() << "expected contract_error";
    } catch (const contract_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
    }
}

// Analytic oracle: d(sum(a.b))/da = ones . b^T.
TEST(Matmul, SumGradientEqualsOnesBt) {
    Rng rng(11);
    ParameterSet params;
    Parameter& a = params.add("a", random_tensor({4, 5}, rng));
    Tensor b = random_tensor({5, 3}, rng);
    Tape tape;
    Ref loss = tape.sum(tape.matmul(tape.leaf(a), tape.input(Tensor(b))));
    tape.backward(loss);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 5; ++j) {
            double expect = 0.0;
            for (std::int64_t c = 0; c < 3; ++c) expect += b.at(j, c);
            EXPECT_NEAR(a.grad.at(i, j), expect, 1e-12);
        }
}

TEST(Softmax, EqualValuesGiveUniform) {
    Tape tape(false);
    Ref r = tape.softmax_rows(tape.input(Tensor::full({2, 4}, 3.25)));
    for (std::int64_t i = 0; i < 8; ++i) EXPECT_NEAR(tape.value(r)[i], 0.25, 1e-15);
}

TEST(Softmax, ClosedFormRow) {
    Tape tape(false);
    Ref r = tape.softmax_rows(tape.input(make_tensor({1, 2}, {0.0, std::log(3.0)})));
    EXPECT_NEAR(tape.value(r)[0], 0.25, 1e-12);
    EXPECT_NEAR(tape.value(r)[1], 0.75, 1e-12);
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(3);
    Tensor x = random_tensor({5, 7}, rng);
    Tensor shifted = x;
    for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 1000.0;
    Tape tape(false);
    Ref a = tape.softmax_rows(tape.input(std::move(x)));
    Ref b = tape.softmax_rows(tape.input(std::move(shifted)));
    for (std::int64_t i = 0; i < tape.value(a).numel(); ++i)
        EXPECT_NEAR(tape.value(a)[i], tape.value(b)[i], 1e-12);
}

TEST(Softmax, RowsSumToOne) {
    Rng rng(4);
    Tape tape(false);
    Ref r = tape.softmax_rows(tape.input(random_tensor({6, 9}, rng, -5, 5)));
    for (std::int64_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < 9; ++j) s += tape.value(r).at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(LayerNorm, ConstantVectorGoesToBias) {
    Tape tape(false);
    Ref gain = tape.input(Tensor::full({4}, 1.0));
    Ref bias = tape.input(Tensor::zeros({4}));
    Ref r = tape.layer_norm(tape.input(Tensor::full({1, 4}, 5.0)), gain, bias, 1e-5);
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_NEAR(tape.value(r)[i], 0.0, 1e-12);

    Ref gain0 = tape.input(Tensor::zeros({4}));
    Ref bias2 = tape.input(Tensor::full({4}, 2.5));
    Rng rng(5);
    Ref r2 = tape.layer_norm(tape.input(random_tensor({3, 4}, rng)), gain0, bias2, 1e-5);
    for (std::int64_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(tape.value(r2)[i], 2.5);
}

TEST(LayerNorm, TwoPointClosedForm) {
    Tape tape(false);
    Ref gain = tape.input(Tensor::full({2}, 1.0));
    Ref bias = tape.input(Tensor::zeros({2}));
    Ref r = tape.layer_norm(tape.input(make_tensor({1, 2}, {1.0, 3.0})), gain, bias, 1e-12);
    EXPECT_NEAR(tape.value(r)[0], -1.0, 1e-6);
    EXPECT_NEAR(tape.value(r)[1], 1.0, 1e-6);
}

TEST(LayerNorm, StandardizesRows) {
    Rng rng(6);
    Tape tape(false);
    const std::int64_t d = 16;
    Ref gain = tape.input(Tensor::full({d}, 1.0));
    Ref bias = tape.input(Tensor::zeros({d}));
    Ref r = tape.layer_norm(tape.input(random_tensor({5, d}, rng, -2, 2)), gain, bias, 1e-12);
    for (std::int64_t i = 0; i < 5; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += tape.value(r).at(i, j);
        mean /= d;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = tape.value(r).at(i, j) - mean;
            var += c * c;
        }
        var /= d;
        EXPECT_NEAR(mean, 0.0, 1e-6);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
    Tape tape(false);
    const std::int64_t V = 1024;
    std::vector<int> targets = {0, 17, 1023};
    Ref loss = tape.cross_entropy(tape.input(Tensor::zeros({3, V})), targets);
    EXPECT_NEAR(tape.value(loss).item(), std::log(1024.0), 1e-9);
}

TEST(CrossEntropy, SaturatedCorrectLogit) {
    Tape tape(false);
    Tensor logits({1, 8});
    logits.at(0, 3) = 50.0;
    std::vector<int> targets = {3};
    Ref loss = tape.cross_entropy(tape.input(std::move(logits)), targets);
    EXPECT_LT(tape.value(loss).item(), 1e-9);
}

TEST(CrossEntropy, TwoPositionClosedForm) {
    Tape tape(false);
    Ref logits = tape.input(make_tensor({2, 2}, {std::log(3.0), 0.0, 0.0, 0.0}));
    std::vector<int> targets = {0, 1};
    Ref loss = tape.cross_entropy(logits, targets);
    const double expect = (std::log(4.0 / 3.0) + std::log(2.0)) / 2.0;
    EXPECT_NEAR(tape.value(loss).item(), expect, 1e-12);
}

TEST(CrossEntropy, TargetOutOfVocabulary) {
    Tape tape(false);
    std::vector<int> targets = {4};
    EXPECT_THROW(tape.cross_entropy(tape.input(Tensor::zeros({1, 4})), targets), contract_error);
}

TEST(Backward, SumGivesOnes) {
    ParameterSet params;
    Rng rng(8);
    Parameter& p = params.add("p", random_tensor({3, 4}, rng));
    Tape tape;
    tape.backward(tape.sum(tape.leaf(p)));
    for (std::int64_t i = 0; i < p.grad.numel(); ++i) EXPECT_DOUBLE_EQ(p.grad[i], 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoP) {
    ParameterSet params;
    Rng rng(9);
    Parameter& p = params.add("p", random_tensor({5}, rng));
    Tape tape;
    Ref leaf = tape.leaf(p);
    tape.backward(tape.sum(tape.mul(leaf, leaf)));
    for (std::int64_t i = 0; i < p.grad.numel(); ++i) EXPECT_NEAR(p.grad[i], 2.0 * p.value[i], 1e-12);
}

TEST(Backward, TwiceWithoutResetFails) {
    ParameterSet params;
    Parameter& p = params.add("p", Tensor::full({2}, 1.0));
    Tape tape;
    Ref loss = tape.sum(tape.leaf(p));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), contract_error);
}

TEST(Backward, UnusedParameterKeepsZeroGradient) {
    ParameterSet params;
    Parameter& used = params.add("used", Tensor::full({2}, 1.0));
    params.add("unused", Tensor::full({3}, 1.0));
    params.zero_grads();
    Tape tape;
    tape.backward(tape.sum(tape.leaf(used)));
    for (std::int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(params.at("unused").grad[i], 0.0);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
    ParameterSet params;
    Parameter& p = params.add("p", Tensor::full({2}, 3.0));
    Tape tape;
    Ref a = tape.leaf(p);
    Ref b = tape.leaf(p);
    tape.backward(tape.sum(tape.add(a, b)));
    for (std::int64_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(p.grad[i], 2.0);
}

// Finite-difference checks for every differentiable op.
TEST(GradCheck, AllOps) {
    Rng rng(42);
    {
        ParameterSet ps;
        Parameter& a = ps.add("a", random_tensor({4, 5}, rng));
        Parameter& b = ps.add("b", random_tensor({5, 3}, rng));
        Tensor w = random_tensor({4, 3}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.matmul(t.leaf(a), t.leaf(b)), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({3, 6}, rng));
        Tensor w = random_tensor({3, 6}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.softmax_rows(t.leaf(x)), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({4, 4}, rng));
        Tensor w = random_tensor({4, 4}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.softmax_rows(t.leaf(x), true), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({3, 5}, rng));
        Parameter& g = ps.add("g", random_tensor({5}, rng, 0.5, 1.5));
        Parameter& b = ps.add("b", random_tensor({5}, rng));
        Tensor w = random_tensor({3, 5}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.layer_norm(t.leaf(x), t.leaf(g), t.leaf(b), 1e-3), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({2, 7}, rng));
        gradcheck(ps, [&](Tape& t) { return t.sum(t.gelu(t.leaf(x))); });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({3, 4}, rng));
        Parameter& y = ps.add("y", random_tensor({3, 4}, rng));
        Parameter& bias = ps.add("bias", random_tensor({4}, rng));
        Tensor w = random_tensor({3, 4}, rng);
        gradcheck(ps, [&](Tape& t) {
            Ref s = t.add(t.leaf(x), t.leaf(y));
            return t.sum(t.mul(t.add_row(s, t.leaf(bias)), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({4, 6}, rng));
        Tensor w = random_tensor({6, 4}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.transpose(t.leaf(x)), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& table = ps.add("table", random_tensor({6, 3}, rng));
        std::vector<int> ids = {0, 5, 2, 5};
        Tensor w = random_tensor({4, 3}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.embedding(t.leaf(table), ids), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& a = ps.add("a", random_tensor({3, 2}, rng));
        Parameter& b = ps.add("b", random_tensor({3, 4}, rng));
        Parameter& c = ps.add("c", random_tensor({2, 6}, rng));
        Tensor w = random_tensor({5, 6}, rng);
        gradcheck(ps, [&](Tape& t) {
            Ref cc = t.concat_cols({t.leaf(a), t.leaf(b)});
            Ref rr = t.concat_rows(cc, t.leaf(c));
            return t.sum(t.mul(rr, t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& x = ps.add("x", random_tensor({4, 8}, rng));
        Tensor w = random_tensor({4, 3}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.slice_cols(t.leaf(x), 2, 3), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& q = ps.add("q", random_tensor({5, 6}, rng));
        Parameter& k = ps.add("k", random_tensor({5, 6}, rng));
        Parameter& v = ps.add("v", random_tensor({5, 6}, rng));
        Tensor w = random_tensor({5, 6}, rng);
        gradcheck(ps, [&](Tape& t) {
            return t.sum(t.mul(t.causal_mha(t.leaf(q), t.leaf(k), t.leaf(v), 2), t.input(Tensor(w))));
        });
    }
    {
        ParameterSet ps;
        Parameter& logits = ps.add("logits", random_tensor({4, 6}, rng));
        std::vector<int> targets = {1, 0, 5, 3};
        gradcheck(ps, [&](Tape& t) { return t.cross_entropy(t.leaf(logits), targets); });
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    ParameterSet ps;
    Rng rng(10);
    Parameter& p = ps.add("p", random_tensor({4}, rng));
    Tensor before = p.value;
    AdamState state;
    adam_step(ps, state, 0.1);
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p.value[i], before[i]);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, SingleScalarHandIteration) {
    // g = 1 held constant, betas (0.9, 0.999), eps 1e-8, lr 0.1: bias
    // correction gives mhat = vhat = 1, so each step moves by lr/(1+eps).
    ParameterSet ps;
    Parameter& p = ps.add("p", Tensor::zeros({1}));
    AdamState state;
    p.grad[0] = 1.0;
    adam_step(ps, state, 0.1);
    EXPECT_NEAR(p.value[0], -0.1, 1e-8);
    p.grad[0] = 1.0;
    adam_step(ps, state, 0.1);
    EXPECT_NEAR(p.value[0], -0.2, 1e-6);
    EXPECT_EQ(state.step, 2u);
}

TEST(Adam, MissingMomentTensorIsStateCorruption) {
    ParameterSet ps;
    ps.add("a", Tensor::zeros({2}));
    AdamState state;
    adam_step(ps, state, 0.1);
    ps.add("b", Tensor::zeros({2}));
    EXPECT_THROW(adam_step(ps, state, 0.1), contract_error);
}

TEST(Adam, GradientsZeroedAfterStep) {
    ParameterSet ps;
    Parameter& p = ps.add("p", Tensor::zeros({3}));
    AdamState state;
    p.grad.fill(2.0);
    adam_step(ps, state, 0.01);
    for (std::int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.grad[i], 0.0);
}

TEST(Determinism, SameSeedSameStream) {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    Rng c = Rng(123).child("x");
    Rng d = Rng(123).child("x");
    for (int i = 0; i < 100; ++i) ASSERT_EQ(c.next_u64(), d.next_u64());
    Rng e = Rng(123).child("y");
    EXPECT_NE(c.next_u64(), e.next_u64());
}

TEST(Rng, UniformBelowAndNormalSanity) {
    Rng rng(77);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_LT(rng.below(17), 17u);
    }
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += rng.normal();
    mean /= n;
    EXPECT_NEAR(mean, 0.0, 0.05);
}
