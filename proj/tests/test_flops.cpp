#include <doctest.h>

#include <random>

#include "ditscale/error.hpp"
#include "ditscale/flops.hpp"

using namespace ditscale;
using namespace ditscale::flops;

namespace {

Count sum_rows(const FlopsBreakdown& b) {
  Count total = 0;
  for (const auto& r : b.rows) total += r.flops;
  return total;
}

}  // namespace

TEST_SUITE("flops") {

TEST_CASE("worked in-context example") {
  TransformerShape s;
  s.n_layer = 2;
  s.d_model = 128;
  s.l_img = 256;
  s.l_text = 120;
  s.l_time = 1;
  REQUIRE(s.l_ctx() == 377);
  CHECK(to_string(incontext_flops(s)) == "1326074880");
  const auto table = incontext_itemized(s);
  CHECK(table.rows.size() == 5);
  CHECK(table.total == incontext_flops(s));
  CHECK(sum_rows(table) == table.total);
}

TEST_CASE("worked cross-attention example") {
  TransformerShape s;
  s.n_layer = 1;
  s.d_model = 64;
  s.l_img = 256;
  s.l_text = 120;
  CHECK(to_string(crossattn_flops(s)) == "167903232");
  const auto table = crossattn_itemized(s);
  CHECK(table.rows.size() == 9);
  CHECK(table.rows[4].operation == "Cross-Attn QKV");
  CHECK(table.total == crossattn_flops(s));
}

TEST_CASE("simplified formulas equal the itemized sums") {
  std::mt19937_64 rng(2024);
  auto pick = [&](int lo, int hi) { return std::int64_t(lo + int(rng() % std::uint64_t(hi - lo + 1))); };
  for (int i = 0; i < 100; ++i) {
    TransformerShape s;
    s.n_layer = pick(1, 48);
    s.d_model = pick(1, 4096);
    s.l_img = pick(1, 4096);
    s.l_text = pick(0, 512);
    s.l_time = pick(0, 4);
    const auto in = incontext_itemized(s);
    CHECK(in.total == incontext_flops(s));
    CHECK(sum_rows(in) == in.total);
    // Hand expansion: 72 l n d^2 + 12 n l^2 d.
    const Count n = Count(s.n_layer), l = Count(s.l_ctx()), d = Count(s.d_model);
    CHECK(in.total == 72 * l * n * d * d + 12 * n * l * l * d);
    const auto cross = crossattn_itemized(s);
    CHECK(cross.total == crossattn_flops(s));
    const Count li = Count(s.l_img), lt = Count(s.l_text);
    CHECK(cross.total == 84 * n * li * d * d + 12 * n * li * li * d + 12 * n * lt * d * d +
                             12 * n * lt * li * d);
  }
}

TEST_CASE("general widths only have an itemized form") {
  TransformerShape s;
  s.d_model = 64;
  s.d_attn = 32;
  CHECK_THROWS_AS(incontext_flops(s), ConfigError);
  CHECK_THROWS_AS(crossattn_flops(s), ConfigError);
  s.d_attn = 0;
  s.d_ff = 100;
  CHECK_THROWS_AS(incontext_flops(s), ConfigError);
  const auto t = incontext_itemized(s);
  CHECK(t.rows.back().flops == Count(3) * 2 * 2 * s.n_layer * s.l_ctx() * 100 * 64);
}

TEST_CASE("reference language-model table and parameter count") {
  TransformerShape s;
  s.n_layer = 1;
  s.d_model = 8;
  s.l_img = 4;
  s.l_text = 0;
  s.l_time = 0;
  s.n_head = 2;
  s.n_voc = 10;
  const auto t = language_model_reference(s);
  REQUIRE(t.rows.size() == 8);
  CHECK(t.rows[0].flops == 2 * 4 * 10 * 8);   // embedding
  CHECK(t.rows[3].flops == 3 * 2 * 4 * 4);    // softmax
  CHECK(t.rows[6].flops == 2 * 4 * 8 * 32 * 2);
  CHECK(kaplan_count(s) == Count(12) * 8 * 1 * (2 * 8 + 32));
}

TEST_CASE("C = 6ND helpers") {
  CHECK(total_compute(1e6, 2e9) == doctest::Approx(1.2e16));
  CHECK(tokens_for(1.2e16, 1e6) == doctest::Approx(2e9));
  CHECK(params_for(1.2e16, 2e9) == doctest::Approx(1e6));
  CHECK_THROWS_AS(total_compute(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(tokens_for(1.0, -1.0), DomainError);
  CHECK_THROWS_AS(params_for(std::nan(""), 1.0), DomainError);
}

TEST_CASE("128-bit arithmetic reports overflow") {
  TransformerShape s;
  s.n_layer = std::int64_t(1) << 40;
  s.d_model = std::int64_t(1) << 40;
  s.l_img = std::int64_t(1) << 40;
  CHECK_THROWS_AS(incontext_flops(s), NumericalError);
  TransformerShape big;
  big.n_layer = 1000;
  big.d_model = 1 << 20;
  big.l_img = 1 << 20;
  CHECK_NOTHROW(incontext_flops(big));
  CHECK(to_string(Count(0)) == "0");
  CHECK(to_string(Count(1) << 100) == "1267650600228229401496703205376");
}

TEST_CASE("invalid shapes") {
  TransformerShape s;
  s.n_layer = 0;
  CHECK_THROWS_AS(incontext_itemized(s), ConfigError);
  s = TransformerShape{};
  s.l_text = -1;
  CHECK_THROWS_AS(crossattn_itemized(s), ConfigError);
}

}  // TEST_SUITE
