#pragma once

#include <string>
#include <vector>

#include "df2am/autodiff.hpp"
#include "df2am/backbone.hpp"

// Dual-level feature fusion: horizontal part pooling, a learned softmax attention over
// parts, and fusion of the attended local feature with the batch-normalized global one.
namespace df2am::dff {

// Parameter name of the attention logits for a modality stream ("attn.shared" when shared).
std::string attention_name(Modality m, bool shared);

// Zero-initialized logits, i.e. uniform attention.
void init_attention(ad::ParamStore& params, std::size_t parts, bool shared);

// feature maps [B, C, H, W] -> parts [B, P, C]. P must divide H.
ad::Var pap(ad::Var feature_maps, std::size_t parts);

// softmax over the P attention logits.
ad::Var attention_weights(ad::Var omega);

// parts [B, P, C], omega [P] -> sum_p softmax(omega)_p * parts[:, p, :], [B, C]
ad::Var local_attention_fuse(ad::Var parts, ad::Var omega);

// BN(global) + f_star, both [B, C].
ad::Var dual_fuse(ad::Tape& tape, ad::ParamStore& params, BatchNorm& bn, ad::Var global, ad::Var f_star,
                  Phase phase, bool update_running);

// Mean cross-entropy over RGB fused embeddings plus mean cross-entropy over IR fused
// embeddings. Inputs are probability rows; labels index into [0, N).
ad::Var dff_loss(ad::Var rgb_probs, ad::Var ir_probs, const std::vector<std::size_t>& rgb_labels,
                 const std::vector<std::size_t>& ir_labels, std::size_t* clamp_count = nullptr);

}  // namespace df2am::dff
