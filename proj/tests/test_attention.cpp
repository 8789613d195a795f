#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "sspain/attention.hpp"
#include "sspain/error.hpp"
#include "sspain/rng.hpp"

using namespace sspain;

TEST_CASE("forced partition: one discriminative AU") {
    AUPartition p = partition_aus({3, 0}, {3.4, 0.2}, {1, 0.1}, 1.0);
    REQUIRE(p.set_A == std::vector<int>{0});
    REQUIRE(p.set_B == std::vector<int>{1});
    CHECK(p.weights.at(0) == doctest::Approx(1.0));
    CHECK(p.n_B == 1);
}

TEST_CASE("threshold boundaries: >= on the negative gap, < on the positive gap") {
    AUPartition q = partition_aus({2.0}, {2.5}, {1.0}, 1.0);  // |Va-Vn| == alpha -> in A
    REQUIRE(q.set_A == std::vector<int>{0});
    AUPartition r = partition_aus({2.0}, {2.5}, {1.5}, 1.0);  // gap 0.5 < alpha -> B
    CHECK(r.set_A.empty());
    AUPartition s = partition_aus({2.0}, {3.0}, {0.0}, 1.0);  // |Va-Vp| == alpha -> B
    CHECK(s.set_A.empty());
}

TEST_CASE("identical members partition everything into B") {
    AUPartition p = partition_aus({1, 2, 3}, {1, 2, 3}, {1, 2, 3}, 1.0);
    CHECK(p.set_A.empty());
    CHECK(p.set_B == std::vector<int>{0, 1, 2});
    CHECK(p.weights.empty());
    CHECK(p.n_B == 3);
}

TEST_CASE("partition rejects mismatched vector lengths") {
    CHECK_THROWS_AS(partition_aus({1, 2}, {1}, {1, 2}, 1.0), DimensionError);
}

TEST_CASE("relevance weights normalize gap magnitudes") {
    std::map<int, double> one = relevance_weights({{3, 2.0}});
    CHECK(one.at(3) == doctest::Approx(1.0));
    std::map<int, double> even = relevance_weights({{0, 2.0}, {1, 2.0}});
    CHECK(even.at(0) == doctest::Approx(0.5));
    CHECK(even.at(1) == doctest::Approx(0.5));
    std::map<int, double> skew = relevance_weights({{0, 3.0}, {1, 1.0}});
    CHECK(skew.at(0) == doctest::Approx(0.75));
    CHECK(skew.at(1) == doctest::Approx(0.25));
    CHECK_THROWS_WITH_AS(relevance_weights({}), "empty relevant set", RangeError);
}

TEST_CASE("partition matches a brute-force reading of the rule on a coarse grid") {
    const std::vector<double> grid = {0, 1, 2, 3, 4, 5};
    for (double alpha : {0.5, 1.0, 2.0}) {
        for (double a0 : grid)
            for (double p0 : grid)
                for (double n0 : grid)
                    for (double a1 : grid)
                        for (double n1 : grid) {
                            const double p1 = a1;  // keep the loop nest affordable
                            AUPartition part = partition_aus({a0, a1}, {p0, p1}, {n0, n1}, alpha);
                            double wsum = 0.0;
                            for (int k = 0; k < 2; ++k) {
                                const double va = k == 0 ? a0 : a1;
                                const double vp = k == 0 ? p0 : p1;
                                const double vn = k == 0 ? n0 : n1;
                                const bool in_A = std::abs(va - vp) < alpha &&
                                                  std::abs(va - vn) >= alpha;
                                const bool got_A =
                                    std::find(part.set_A.begin(), part.set_A.end(), k) !=
                                    part.set_A.end();
                                REQUIRE(in_A == got_A);
                                if (in_A) wsum += part.weights.at(k);
                            }
                            if (!part.set_A.empty()) REQUIRE(std::abs(wsum - 1.0) < 1e-9);
                            REQUIRE(part.set_A.size() + part.set_B.size() == 2u);
                        }
    }
}

TEST_CASE("patch boxes stay full-size and shift away from edges") {
    PatchBox c = patch_box(16, 16, 32, 32, 5);
    CHECK(c.x0() == 11);
    CHECK(c.y0() == 11);
    CHECK(c.side() == 11);

    PatchBox e = patch_box(1, 16, 32, 32, 5);  // x near the left edge: columns shift to 0..10
    CHECK(e.x0() == 0);
    CHECK(e.y0() == 11);
    CHECK(e.side() == 11);

    PatchBox f = patch_box(31, 30, 32, 32, 5);  // both axes clamp to 32-11 = 21
    CHECK(f.x0() == 21);
    CHECK(f.y0() == 21);

    CHECK_THROWS_AS(patch_box(4, 4, 8, 8, 5), DimensionError);
}

TEST_CASE("attention map rendering uses weights with max under overlap") {
    AUPartition empty;
    empty.set_B = {0, 1};
    empty.n_B = 2;
    std::vector<PatchBox> boxes = {patch_box(8, 8, 32, 32, 5), patch_box(12, 8, 32, 32, 5)};
    boxes[0].au = 0;
    boxes[1].au = 1;
    Tensor zero_map = render_attention_map(empty, boxes, 32, 32);
    for (std::size_t i = 0; i < zero_map.size(); ++i) CHECK(zero_map[i] == 0.0);

    AUPartition one;
    one.set_A = {0};
    one.set_B = {1};
    one.weights[0] = 1.0;
    one.n_B = 1;
    Tensor mask = render_attention_map(one, boxes, 32, 32);
    CHECK(mask.at3(0, 8, 8) == 1.0);
    CHECK(mask.at3(0, 3, 3) == 1.0);   // corner of the box
    CHECK(mask.at3(0, 8, 14) == 0.0);  // inside box 1 only, which is in B

    AUPartition both;
    both.set_A = {0, 1};
    both.weights[0] = 0.75;
    both.weights[1] = 0.25;
    Tensor overlap = render_attention_map(both, boxes, 32, 32);
    CHECK(overlap.at3(0, 8, 10) == 0.75);  // overlap region keeps the max
    CHECK(overlap.at3(0, 8, 17) == 0.25);  // only the second box
    for (std::size_t i = 0; i < overlap.size(); ++i) {
        CHECK(overlap[i] >= 0.0);
        CHECK(overlap[i] <= 1.0);
    }
}

TEST_CASE("patch extraction and gradient scatter are inverse placements") {
    Rng rng(77);
    Tensor map({1, 16, 16});
    for (std::size_t i = 0; i < map.size(); ++i) map[i] = rng.uniform();
    PatchBox box = patch_box(3, 12, 16, 16, 2);
    Tensor patch = extract_patch(map, box);
    REQUIRE(patch.shape() == std::vector<int>{box.side(), box.side()});
    for (int dy = 0; dy < box.side(); ++dy)
        for (int dx = 0; dx < box.side(); ++dx)
            CHECK(patch.at2(dy, dx) == map.at3(0, box.y0() + dy, box.x0() + dx));

    Tensor grad({1, 16, 16});
    Tensor gpatch(patch.shape());
    gpatch.fill(1.0);
    scatter_patch_grad(grad, box, gpatch);
    scatter_patch_grad(grad, box, gpatch);  // accumulates
    double total = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) total += grad[i];
    CHECK(total == doctest::Approx(2.0 * box.side() * box.side()));
    CHECK(grad.at3(0, box.y0(), box.x0()) == 2.0);
}
