#include <doctest.h>

#include "cpvit/error.hpp"
#include "cpvit/mask.hpp"

using namespace cpvit;

TEST_SUITE("mask") {

TEST_CASE("dense mask and counts") {
    const auto m = CascadeMask::dense(5, 3, 2);
    CHECK(m.alive_patches() == 5);
    CHECK(m.alive_heads() == 3);
    CHECK(m.layer_index == 2);
    CHECK(is_subset({1, 0, 1}, {1, 1, 1}));
    CHECK_FALSE(is_subset({1, 1, 1}, {1, 0, 1}));
}

TEST_CASE("cascade validation") {
    const auto prev = CascadeMask{{1, 1, 0, 1}, {1, 1}, 0};
    CHECK_NOTHROW(validate_cascade({{1, 1, 0, 0}, {0, 1}, 1}, 4, 2, &prev));
    CHECK_THROWS_AS(validate_cascade({{0, 1, 1, 1}, {1, 1}, 0}, 4, 2), ConfigError);
    CHECK_THROWS_AS(validate_cascade({{1, 0, 0, 0}, {1, 1}, 0}, 4, 2), ConfigError);
    CHECK_THROWS_AS(validate_cascade({{1, 1, 1, 1}, {0, 0}, 0}, 4, 2), ConfigError);
    CHECK_THROWS_AS(validate_cascade({{1, 1, 1}, {1, 1}, 0}, 4, 2), ConfigError);
    CHECK_THROWS_AS(validate_cascade({{1, 1, 1, 1}, {1, 1}, 1}, 4, 2, &prev), ConfigError);
}

}
