#include "ditscale/flops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "ditscale/error.hpp"

namespace ditscale::flops {

namespace {

Count mul(std::initializer_list<std::int64_t> factors) {
  Count product = 1;
  for (std::int64_t f : factors) {
    if (f < 0) throw DomainError("flops: negative factor");
    Count next;
    if (__builtin_mul_overflow(product, static_cast<Count>(f), &next)) {
      throw NumericalError("flops: 128-bit overflow");
    }
    product = next;
  }
  return product;
}

Count add(Count a, Count b) {
  Count sum;
  if (__builtin_add_overflow(a, b, &sum)) throw NumericalError("flops: 128-bit overflow");
  return sum;
}

FlopsBreakdown finish(std::vector<FlopsRow> rows) {
  FlopsBreakdown out;
  for (const auto& r : rows) out.total = add(out.total, r.flops);
  out.rows = std::move(rows);
  return out;
}

void require_simplified(const TransformerShape& s, const char* who) {
  if (s.attn() != s.d_model || s.ff() != 4 * s.d_model) {
    throw ConfigError(std::string(who) +
                      ": the simplified form needs d_attn = d_model and d_ff = 4 d_model; "
                      "use the itemized breakdown instead");
  }
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw DomainError(std::string("C = 6ND: ") + name + " must be positive and finite");
  }
}

}  // namespace

void validate(const TransformerShape& s) {
  if (s.n_layer <= 0 || s.d_model <= 0 || s.l_img <= 0 || s.n_head <= 0) {
    throw ConfigError("transformer shape: n_layer, d_model, l_img and n_head must be positive");
  }
  if (s.d_attn < 0 || s.d_ff < 0 || s.l_text < 0 || s.l_time < 0 || s.n_voc < 0) {
    throw ConfigError("transformer shape: negative dimension");
  }
}

FlopsBreakdown incontext_itemized(const TransformerShape& s) {
  validate(s);
  const std::int64_t n = s.n_layer, l = s.l_ctx(), d = s.d_model, a = s.attn();
  return finish({
      {"Self-Attn: QKV Projection", mul({3, 2, n, l, d, 3, a})},
      {"Self-Attn: QK", mul({3, 2, n, l, l, a})},
      {"Self-Attn: Mask", mul({3, 2, n, l, l, a})},
      {"Self-Attn: Projection", mul({3, 2, n, l, d, a})},
      {"Self-Attn: FFN", mul({3, 2, 2, n, l, s.ff(), d})},
  });
}

Count incontext_flops(const TransformerShape& s) {
  validate(s);
  require_simplified(s, "incontext_flops");
  const std::int64_t n = s.n_layer, l = s.l_ctx(), d = s.d_model;
  return add(mul({72, l, n, d, d}), mul({12, n, l, l, d}));
}

FlopsBreakdown crossattn_itemized(const TransformerShape& s) {
  validate(s);
  const std::int64_t n = s.n_layer, li = s.l_img, lt = s.l_text, d = s.d_model, a = s.attn();
  return finish({
      {"Self-Attn: QKV Projection", mul({3, 2, n, li, d, 3, a})},
      {"Self-Attn: QK", mul({3, 2, n, li, li, a})},
      {"Self-Attn: Mask", mul({3, 2, n, li, li, a})},
      {"Self-Attn: Projection", mul({3, 2, n, li, d, a})},
      {"Cross-Attn QKV", mul({3, 2, n, li + 2 * lt, d, a})},
      {"Cross-Attn QK", mul({3, 2, n, lt, li, a})},
      {"Cross-Attn Mask", mul({3, 2, n, lt, li, a})},
      {"Cross-Attn Projection", mul({3, 2, n, li, d, a})},
      {"FFN", mul({3, 2, 2, n, li, s.ff(), d})},
  });
}

Count crossattn_flops(const TransformerShape& s) {
  validate(s);
  require_simplified(s, "crossattn_flops");
  const std::int64_t n = s.n_layer, li = s.l_img, lt = s.l_text, d = s.d_model;
  Count total = mul({84, n, li, d, d});
  total = add(total, mul({12, n, li, li, d}));
  total = add(total, mul({12, n, lt, d, d}));
  total = add(total, mul({12, n, lt, li, d}));
  return total;
}

Count kaplan_count(const TransformerShape& s) {
  validate(s);
  return mul({12, s.d_model, s.n_layer, 2 * s.attn() + s.ff()});
}

FlopsBreakdown language_model_reference(const TransformerShape& s) {
  validate(s);
  const std::int64_t l = s.l_ctx(), d = s.d_model, v = s.n_voc;
  return finish({
      {"Embedding", mul({2, l, v, d})},
      {"Attention: QKV Mapping", mul({2, 3, l, d, d})},
      {"Attention: QK", mul({2, l, l, d})},
      {"Attention: Softmax", mul({3, s.n_head, l, l})},
      {"Attention: Mask", mul({2, l, l, d})},
      {"Attention: Projection", mul({2, l, d, d})},
      {"Dense", mul({2, l, d, s.ff(), 2})},
      {"Logits", mul({2, l, d, v})},
  });
}

double total_compute(double n_params, double tokens) {
  require_positive(n_params, "N");
  require_positive(tokens, "D");
  return 6.0 * n_params * tokens;
}

double tokens_for(double compute, double n_params) {
  require_positive(compute, "C");
  require_positive(n_params, "N");
  return compute / (6.0 * n_params);
}

double params_for(double compute, double tokens) {
  require_positive(compute, "C");
  require_positive(tokens, "D");
  return compute / (6.0 * tokens);
}

std::string to_string(Count value) {
  if (value == 0) return "0";
  std::string digits;
  while (value > 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(value % 10)));
    value /= 10;
  }
  std::reverse(digits.begin(), digits.end());
  return digits;
}

double to_double(Count value) { return static_cast<double>(value); }

}  // namespace ditscale::flops
