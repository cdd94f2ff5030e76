#include <catch_amalgamated.hpp>

#include "cd2pfed/distill.hpp"

using namespace cd2pfed;

TEST_CASE("kl: identity, clamped closed form, asymmetry") {
    std::vector<Scalar> p = {0.2, 0.3, 0.5};
    CHECK(distill::kl(p, p) == 0.0);

    // p = (1, 0), q = (0.5, 0.5): 1*ln(1/0.5) + clamp-zero term
    std::vector<Scalar> one_hot = {1.0, 0.0}, uniform = {0.5, 0.5};
    CHECK_THAT(distill::kl(one_hot, uniform),
               Catch::Matchers::WithinAbs(std::log(2.0) + 1e-12 * (std::log(1e-12) - std::log(0.5)),
                                          1e-15));
    CHECK_THAT(distill::kl(one_hot, uniform), Catch::Matchers::WithinAbs(std::log(2.0), 1e-9));

    std::vector<Scalar> q = {0.6, 0.3, 0.1};
    CHECK(distill::kl(p, q) != distill::kl(q, p));
    CHECK(distill::kl(p, q) >= 0.0);
    CHECK(distill::kl(q, p) >= 0.0);
}

TEST_CASE("cyclic loss: zero at agreement, symmetric in arguments") {
    Matrix a(2, 3), b(2, 3);
    a.data = {0.2, 0.3, 0.5, 0.1, 0.1, 0.8};
    b.data = {0.5, 0.25, 0.25, 0.3, 0.4, 0.3};
    CHECK(distill::cyclic_distillation_loss(a, a) == 0.0);
    CHECK(distill::cyclic_distillation_loss(a, b) == distill::cyclic_distillation_loss(b, a));
    CHECK(distill::cyclic_distillation_loss(a, b) > 0.0);
}

TEST_CASE("cyclic loss matches a high-precision oracle on a random 3-class batch") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<Scalar> u(0.1, 1.0);
    Matrix a(4, 3), b(4, 3);
    for (std::size_t s = 0; s < 4; ++s) {
        Scalar sa = 0, sb = 0;
        for (int j = 0; j < 3; ++j) {
            a.at(s, j) = u(rng);
            b.at(s, j) = u(rng);
            sa += a.at(s, j);
            sb += b.at(s, j);
        }
        for (int j = 0; j < 3; ++j) {
            a.at(s, j) /= sa;
            b.at(s, j) /= sb;
        }
    }
    long double expect = 0.0L;
    for (std::size_t s = 0; s < 4; ++s) {
        long double k1 = 0.0L, k2 = 0.0L;
        for (int j = 0; j < 3; ++j) {
            long double pa = a.at(s, j), pb = b.at(s, j);
            k1 += pa * (std::log(pa) - std::log(pb));
            k2 += pb * (std::log(pb) - std::log(pa));
        }
        expect += 0.5L * (k1 + k2);
    }
    expect /= 4.0L;
    CHECK_THAT(distill::cyclic_distillation_loss(a, b),
               Catch::Matchers::WithinAbs(static_cast<double>(expect), 1e-14));
}

TEST_CASE("total loss: lambda 0 is plain cross entropy") {
    Matrix zf(2, 3), zl(2, 3), zg(2, 3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<Scalar> u(-2.0, 2.0);
    for (auto& v : zf.data) v = u(rng);
    for (auto& v : zl.data) v = u(rng);
    for (auto& v : zg.data) v = u(rng);
    std::vector<int> labels = {1, 2};
    auto with = distill::total_loss(zf, labels, zl, zg, 0.0, true);
    CHECK(with.total == with.ce);
    CHECK_THAT(with.ce, Catch::Matchers::WithinAbs(nn::cross_entropy(nn::softmax(zf), labels), 1e-15));
}

TEST_CASE("total loss: agreeing subnets contribute nothing and zero gradients") {
    Matrix zf(2, 3), zl(2, 3);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<Scalar> u(-2.0, 2.0);
    for (auto& v : zf.data) v = u(rng);
    for (auto& v : zl.data) v = u(rng);
    std::vector<int> labels = {0, 1};
    auto res = distill::total_loss(zf, labels, zl, zl, 1.0, true);
    CHECK(res.cd == 0.0);
    CHECK(res.total == res.ce);
    for (Scalar g : res.d_private.data) CHECK(g == 0.0);
    for (Scalar g : res.d_shared.data) CHECK(g == 0.0);
}

TEST_CASE("total loss equals independently recomputed CE + lambda * L_CD") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<Scalar> u(-3.0, 3.0);
    Matrix zf(3, 4), zl(3, 4), zg(3, 4);
    for (auto& v : zf.data) v = u(rng);
    for (auto& v : zl.data) v = u(rng);
    for (auto& v : zg.data) v = u(rng);
    std::vector<int> labels = {3, 0, 2};
    const Scalar lambda = 0.7;
    auto res = distill::total_loss(zf, labels, zl, zg, lambda, true);
    Scalar ce = nn::cross_entropy(nn::softmax(zf), labels);
    Scalar cd = distill::cyclic_distillation_loss(nn::softmax(zl), nn::softmax(zg));
    CHECK_THAT(res.total, Catch::Matchers::WithinAbs(ce + lambda * cd, 1e-14));
}

TEST_CASE("cyclic loss is nonnegative and vanishes only at agreement") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<Scalar> u(0.05, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        Matrix a(1, 4), b(1, 4);
        Scalar sa = 0, sb = 0;
        for (int j = 0; j < 4; ++j) {
            a.data[j] = u(rng);
            b.data[j] = u(rng);
            sa += a.data[j];
            sb += b.data[j];
        }
        for (int j = 0; j < 4; ++j) {
            a.data[j] /= sa;
            b.data[j] /= sb;
        }
        Scalar l = distill::cyclic_distillation_loss(a, b);
        CHECK(l >= 0.0);
        bool agree = true;
        for (int j = 0; j < 4; ++j)
            if (std::abs(a.data[j] - b.data[j]) > 1e-9) agree = false;
        if (!agree) CHECK(l > 0.0);
    }
}
