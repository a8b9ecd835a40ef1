#pragma once

// Closed-form FLOPs accounting for in-context and cross-attention diffusion
// transformers, in exact 128-bit integer arithmetic.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ditscale::flops {

using Count = unsigned __int128;

struct TransformerShape {
  std::int64_t n_layer = 1;
  std::int64_t d_model = 64;
  std::int64_t d_attn = 0;  // 0 means d_model
  std::int64_t d_ff = 0;    // 0 means 4 * d_model
  std::int64_t l_img = 256;
  std::int64_t l_text = 120;
  std::int64_t l_time = 1;
  std::int64_t n_head = 1;
  std::int64_t n_voc = 0;  // only the language-model reference table reads it

  std::int64_t attn() const { return d_attn == 0 ? d_model : d_attn; }
  std::int64_t ff() const { return d_ff == 0 ? 4 * d_model : d_ff; }
  std::int64_t l_ctx() const { return l_img + l_text + l_time; }
};

/// n_layer, d_model, l_img, n_head > 0; l_text, l_time >= 0.
void validate(const TransformerShape& shape);

struct FlopsRow {
  std::string operation;
  Count flops = 0;
};

struct FlopsBreakdown {
  std::vector<FlopsRow> rows;
  Count total = 0;
};

/// Five rows: QKV projection, QK, mask, output projection, FFN.
/// The FFN row is 12 * n_layer * l_ctx * d_ff * d_model, which is the
/// tabulated 4 * d_model^2 form whenever d_ff = 4 * d_model.
FlopsBreakdown incontext_itemized(const TransformerShape& shape);

/// 72 l n d^2 + 12 n l^2 d. Requires d_attn = d_model and d_ff = 4 d_model.
Count incontext_flops(const TransformerShape& shape);

/// Nine rows: self-attention (4), cross-attention (4), FFN.
FlopsBreakdown crossattn_itemized(const TransformerShape& shape);

/// 84 n l_i d^2 + 12 n l_i^2 d + 12 n l_t d^2 + 12 n l_t l_i d, under the
/// same preconditions as incontext_flops().
Count crossattn_flops(const TransformerShape& shape);

/// 12 * d_model * n_layer * (2 d_attn + d_ff): embeddings, biases and
/// context-dependent terms excluded.
Count kaplan_count(const TransformerShape& shape);

/// Fully itemised per-layer forward count in the language-model style
/// (embedding, QKV, QK, softmax, mask, projection, dense, logits), using
/// l_ctx and n_voc. Reference only; the diffusion accounting above drops
/// the embedding and logits rows.
FlopsBreakdown language_model_reference(const TransformerShape& shape);

/// C = 6 N D and its inversions. Inputs must be positive.
double total_compute(double n_params, double tokens);
double tokens_for(double compute, double n_params);
double params_for(double compute, double tokens);

std::string to_string(Count value);
double to_double(Count value);

}  // namespace ditscale::flops
