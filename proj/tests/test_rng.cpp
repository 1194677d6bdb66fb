#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "vflbed/rng.hpp"

using namespace vflbed;

namespace {

// Independent re-statement of the mixing function from its published
// constants, used as an oracle against the library's copy.
std::uint64_t mix_oracle(std::uint64_t x) {
    std::uint64_t z = x + UINT64_C(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

} // namespace

TEST_CASE("seed mixer matches an independent restatement") {
    const std::uint64_t cases[] = {0, 1, 42, 0xdeadbeef, UINT64_MAX};
    for (std::uint64_t x : cases) {
        CHECK(detail::splitmix64(x) == mix_oracle(x));
    }
}

TEST_CASE("string hash matches published test vectors") {
    // Offset basis and the canonical single-byte value for FNV-1a 64.
    CHECK(detail::fnv1a64("") == UINT64_C(0xcbf29ce484222325));
    CHECK(detail::fnv1a64("a") == UINT64_C(0xaf63dc4c8601ec8c));
    CHECK(detail::fnv1a64("shuffle") != detail::fnv1a64("init"));
}

TEST_CASE("same seed, same sequence") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    bool differ = false;
    for (int i = 0; i < 10 && !differ; ++i) differ = a.next_u64() != b.next_u64();
    CHECK(differ);
}

TEST_CASE("streams are keyed by label, not by draw position") {
    Rng root(7);
    Rng fresh(7);
    // Burn draws on the root; derived streams must not notice.
    for (int i = 0; i < 57; ++i) root.next_u64();
    CHECK(root.stream("weights").next_u64() == fresh.stream("weights").next_u64());
    CHECK(root.stream("noise").stream(3).next_u64() == fresh.stream("noise").stream(3).next_u64());
}

TEST_CASE("sibling streams are independent") {
    Rng root(99);
    Rng a1 = root.stream("a");
    // Consuming from one sibling leaves the other untouched.
    for (int i = 0; i < 13; ++i) a1.next_u64();
    CHECK(root.stream("b").next_u64() == Rng(99).stream("b").next_u64());
    CHECK(root.stream("a").next_u64() == Rng(99).stream("a").next_u64());
    CHECK(root.stream("a").next_u64() != root.stream("b").next_u64());
    CHECK(root.stream(0).next_u64() != root.stream(1).next_u64());
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
    Rng r(5);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("bounded uniform respects its interval") {
    Rng r(6);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-2.5, 3.5);
        REQUIRE(u >= -2.5);
        REQUIRE(u < 3.5);
    }
}

TEST_CASE("uniform_index covers every bucket and rejects empty ranges") {
    Rng r(8);
    std::set<std::size_t> seen;
    for (int i = 0; i < 500; ++i) {
        const std::size_t k = r.uniform_index(7);
        REQUIRE(k < 7);
        seen.insert(k);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(r.uniform_index(0), InputError);
}

TEST_CASE("normal draws have standard moments") {
    Rng r(11);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("normal with moments applies the affine map") {
    Rng a(21), b(21);
    for (int i = 0; i < 16; ++i) {
        CHECK(a.normal(3.0, 2.0) == 3.0 + 2.0 * b.normal());
    }
}

TEST_CASE("permutation is a bijection and deterministic") {
    Rng a(31), b(31);
    const auto p = a.permutation(100);
    CHECK(p == b.permutation(100));
    std::vector<std::size_t> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(100);
    std::iota(iota.begin(), iota.end(), std::size_t{0});
    CHECK(sorted == iota);
    CHECK(Rng(31).permutation(0).empty());
    CHECK(Rng(31).permutation(1) == std::vector<std::size_t>{0});
}

TEST_CASE("shuffle keeps the multiset") {
    Rng r(41);
    std::vector<int> v = {5, 5, 1, 2, 9};
    std::vector<int> w = v;
    r.shuffle(v);
    std::sort(v.begin(), v.end());
    std::sort(w.begin(), w.end());
    CHECK(v == w);
}
