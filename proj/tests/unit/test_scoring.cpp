#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "cpvit/error.hpp"
#include "cpvit/scoring.hpp"
#include "oracles.hpp"

using namespace cpvit;

TEST_SUITE("scoring") {

TEST_CASE("sum criteria on simple tensors") {
    const Tensor zero({2, 4, 4}, 0.0);
    CHECK(oracle_patch_informativeness(zero, 1, 1, 0.3, 2.0) == 0.0);
    CHECK(oracle_head_informativeness(zero, 0) == 0.0);

    const auto a = oracle::random_attention(3, 5, 1);
    for (std::size_t p = 0; p < 5; ++p) {
        CHECK(oracle_patch_informativeness(a, p, 2, 1.0, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(oracle_head_informativeness(a, 1) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("layer criterion is linear in heads") {
    const auto one = oracle::random_attention(1, 6, 2);
    CHECK(oracle_layer_patch_informativeness(one, 3) == oracle_patch_informativeness(one, 3, 0));
    Tensor three({3, 6, 6});
    for (std::size_t h = 0; h < 3; ++h)
        std::copy(one.data().begin(), one.data().end(), three.data().begin() + static_cast<std::ptrdiff_t>(h * 36));
    CHECK(oracle_layer_patch_informativeness(three, 3, 0.7, 1.1) ==
          doctest::Approx(3.0 * oracle_patch_informativeness(one, 3, 0, 0.7, 1.1)).epsilon(1e-12));
}

TEST_CASE("sum criteria agree with the loop references") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto a = oracle::random_tensor({4, 6, 6}, seed);
        for (std::size_t p = 0; p < 6; ++p) {
            CHECK(std::abs(oracle_patch_informativeness(a, p, seed % 4, 0.5, 2.0) -
                           oracle::naive_patch_informativeness(a, p, seed % 4, 0.5, 2.0)) <= 1e-12);
            CHECK(std::abs(oracle_layer_patch_informativeness(a, p, 0.5, 2.0) -
                           oracle::naive_layer_patch_informativeness(a, p, 0.5, 2.0)) <= 1e-12);
        }
        CHECK(std::abs(oracle_head_informativeness(a, 2) - oracle::naive_head_informativeness(a, 2)) <= 1e-12);
    }
    const auto a = oracle::random_tensor({2, 4, 4}, 0);
    CHECK_THROWS_AS(oracle_patch_informativeness(a, 4, 0), ParameterError);
    CHECK_THROWS_AS(oracle_head_informativeness(a, 2), ParameterError);
}

TEST_CASE("max criterion") {
    const auto id = oracle::identity_attention(1, 4);
    const auto d = fast_scores(id, all_alive(4), all_alive(1));
    CHECK(d.patch == std::vector<double>(4, 1.0));
    CHECK(d.head == std::vector<double>{4.0});

    const Tensor uniform({1, 5, 5}, 0.2);
    const BinaryMask partly{1, 1, 0, 1, 1};
    const auto u = fast_scores(uniform, partly, all_alive(1));
    CHECK(u.patch == std::vector<double>{0.2, 0.2, 0.0, 0.2, 0.2});
    CHECK(u.head[0] == doctest::Approx(4.0 / 5.0).epsilon(1e-15));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto a = oracle::random_attention(2, 5, seed);
        BinaryMask heads{1, static_cast<std::uint8_t>(seed % 2)};
        const auto got = fast_scores(a, partly, heads);
        const auto ref = oracle::naive_column_max_deltas(a, partly, heads);
        CHECK(got.patch == ref.patch);
        for (std::size_t h = 0; h < 2; ++h) CHECK(got.head[h] == doctest::Approx(ref.head[h]).epsilon(1e-14));
        CHECK(got.patch[2] == 0.0);
        for (double v : got.patch) CHECK((v >= 0.0 && v <= 2.0));
    }
}

TEST_CASE("dominant column ranks first under both criteria") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t L = 6 + seed % 5, c = 1 + seed % (L - 1);
        const auto a = oracle::dominant_column_attention(3, L, c, seed);
        std::vector<double> sums(L);
        for (std::size_t p = 0; p < L; ++p) sums[p] = oracle_layer_patch_informativeness(a, p);
        const auto fast = fast_scores(a, all_alive(L), all_alive(3)).patch;
        CHECK(argmax(sums) == c);
        CHECK(argmax(fast) == c);
    }
}

TEST_CASE("accumulation") {
    auto s = CumulativeScores::zeros(3, 2);
    const ScoreDeltas none{{0, 0, 0}, {0, 0}};
    auto t = accumulate(s, none);
    CHECK(t.patch == s.patch);
    CHECK(t.layers_accumulated == 1);

    const ScoreDeltas a{{0.1, 0.2, 0.3}, {1.0, 0.5}}, b{{0.4, 0.0, 0.25}, {0.125, 2.0}};
    const auto twice = accumulate(accumulate(s, a), b);
    const auto once = accumulate(s, ScoreDeltas{{0.5, 0.2, 0.55}, {1.125, 2.5}});
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(twice.patch[i] - once.patch[i]) <= 1e-12);
    for (std::size_t h = 0; h < 2; ++h) CHECK(std::abs(twice.head[h] - once.head[h]) <= 1e-12);
}

TEST_CASE("literal head rule folds running patch totals") {
    const auto a = oracle::random_attention(2, 4, 3);
    const auto alive = all_alive(4);
    CumulativeScores s = CumulativeScores::zeros(4, 2);
    s.patch = {1.0, 2.0, 0.0, 0.5};
    const auto got = accumulate_literal(s, a, alive, all_alive(2));
    const auto deltas = oracle::naive_column_max_deltas(a, alive, all_alive(2));
    // head 0 sees the initial totals plus its own maxima, head 1 also sees head 1's
    double running = 3.5;
    std::vector<double> head0(4), head1(4);
    for (std::size_t p = 0; p < 4; ++p) {
        double m0 = 0.0, m1 = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            m0 = std::max(m0, a.at(0, i, p));
            m1 = std::max(m1, a.at(1, i, p));
        }
        head0[p] = m0;
        head1[p] = m1;
    }
    const double after0 = running + std::accumulate(head0.begin(), head0.end(), 0.0);
    const double after1 = after0 + std::accumulate(head1.begin(), head1.end(), 0.0);
    CHECK(got.head[0] == doctest::Approx(after0).epsilon(1e-12));
    CHECK(got.head[1] == doctest::Approx(after1).epsilon(1e-12));
    for (std::size_t p = 0; p < 4; ++p) CHECK(got.patch[p] == doctest::Approx(s.patch[p] + deltas.patch[p]));
}

TEST_CASE("segments") {
    Tensor a({1, 3, 3}, 0.0);
    // column means 0.1, 0.6, 0.3
    for (std::size_t i = 0; i < 3; ++i) {
        a.at(0, i, 0) = 0.1;
        a.at(0, i, 1) = 0.6;
        a.at(0, i, 2) = 0.3;
    }
    const auto s = segment_patches(a, 3);
    CHECK(s == std::vector<std::vector<std::size_t>>{{0}, {2}, {1}});

    const auto flat = segment_patches(Tensor({1, 7, 7}, 1.0 / 7.0), 3);
    CHECK(flat == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}, {4, 5, 6}});

    const auto r = oracle::random_attention(2, 9, 4);
    const auto parts = segment_patches(r, 3);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& part : parts) {
        total += part.size();
        seen.insert(part.begin(), part.end());
    }
    CHECK(total == 9);
    CHECK(seen.size() == 9);

    const BinaryMask alive{0, 1, 1, 1, 1, 1, 1, 1, 1};
    std::size_t counted = 0;
    for (const auto& part : segment_patches(r, 3, alive)) {
        counted += part.size();
        CHECK(std::find(part.begin(), part.end(), 0) == part.end());
    }
    CHECK(counted == 8);

    CHECK_THROWS_AS(segment_patches(Tensor({1, 2, 2}, 0.5), 3), ParameterError);
    CHECK_THROWS_AS(segment_patches(r, 1), ParameterError);
}

}
