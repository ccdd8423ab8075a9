#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pedcross/ops.hpp"
#include "pedcross/tensor.hpp"

namespace pedcross {

enum class Arch { kTeo, kTep, kTed };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);  // "teo" | "tep" | "ted"

struct ModelConfig {
    Arch arch = Arch::kTeo;
    int d_model = 128;
    int n_heads = 8;
    int n_layers = 4;
    int d_ffn = 256;
    int d_cls = 0;  // classification head hidden width; 0 means d_model
    int obs_len = 16;
    int pool_window = 2;     // TEP only
    int pool_stride = 2;     // TEP only
    int min_pooled_len = 2;  // TEP stops pooling below this length
    int pe_len = 128;        // sinusoidal table length, covers decoder targets
    double ln_eps = 1e-5;
    double dropout = 0.0;  // experimentation knob, default off
    bool separate_decoder_embedding = false;

    int head_dim() const { return d_model / n_heads; }
    int cls_dim() const { return d_cls > 0 ? d_cls : d_model; }
    void validate() const;  // throws ConfigError
};

struct EmbeddingParams {
    Tensor we;  // [4 x D]
    Tensor be;  // [D], broadcast over rows
    Tensor pe;  // [pe_len x D], fixed, never trained
};

struct AttentionParams {
    std::vector<Tensor> wq, wk, wv;  // per head, [D x F]
    Tensor wo;                       // [D x D]
};

struct LayerNormParams {
    Tensor gain, bias;  // [D]
};

struct FfnParams {
    Tensor w1, b1;  // D -> Dff
    Tensor w2, b2;  // Dff -> D
};

struct EncoderLayerParams {
    AttentionParams mha;
    LayerNormParams ln1, ln2;
    FfnParams ffn;
};

struct DecoderLayerParams {
    AttentionParams self_mha, cross_mha;
    LayerNormParams ln1, ln2, ln3;
    FfnParams ffn;
};

struct HeadParams {
    Tensor w1, b1;  // D -> D_cls
    Tensor w2, b2;  // D_cls -> 1
};

struct ModelParams {
    ModelConfig config;
    EmbeddingParams embed;
    std::optional<EmbeddingParams> dec_embed;  // when separate_decoder_embedding
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;  // TED only
    Tensor traj_w, traj_b;                    // D -> 4 (TED only)
    HeadParams head;

    // Stable (name, tensor) pairs in a fixed order, e.g. enc.3.mha.h2.wq.
    // The positional-encoding tables are excluded.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

// Deep snapshots of parameter values, in named_parameters() order.
std::vector<std::vector<double>> snapshot_values(const ModelParams& m);
void restore_values(ModelParams& m, const std::vector<std::vector<double>>& snapshot);

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
Tensor positional_encoding(int t_max, int d);

// [rows x rows] additive mask, 0 on/below the diagonal, -inf above.
Tensor causal_mask(int rows);

Tensor embed_input(const Tensor& x, const EmbeddingParams& p, Tape* tape = nullptr);

// softmax(q k^T / sqrt(d_k) + mask) v, with d_k = cols(q). `mask` may be
// undefined (no masking).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                 Tape* tape = nullptr);

// Per-head projected attention, concatenated and projected by wo. The
// query sequence may be shorter than the key/value sequence.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                            const Tensor& mask, Tape* tape = nullptr);

Tensor encoder_layer(const Tensor& h, const EncoderLayerParams& p, const ModelConfig& cfg,
                     Tape* tape = nullptr);

// Queries are pooled, keys/values stay at the incoming length, and the
// residual runs on the pooled stream. Pooling is skipped when the
// pooled length would drop below min_pooled_len (or the window no
// longer fits).
Tensor encoder_pooling_layer(const Tensor& h, const EncoderLayerParams& p, const ModelConfig& cfg,
                             Tape* tape = nullptr);

Tensor decoder_layer(const Tensor& h_dec, const Tensor& enc_memory, const DecoderLayerParams& p,
                     const ModelConfig& cfg, Tape* tape = nullptr);

// Mean-pool over time, one hidden projection with ReLU, then a sigmoid
// unit. Returns a [1 x 1] probability.
Tensor classify(const Tensor& enc_out, const HeadParams& p, Tape* tape = nullptr);

// Sequence lengths after each encoder layer for a TEP config.
std::vector<int> pooled_lengths(const ModelConfig& cfg);

// Embedding plus the architecture's encoder stack.
Tensor encode(const ModelParams& m, const Tensor& x, Tape* tape = nullptr);

Tensor forward_teo(const ModelParams& m, const Tensor& x, Tape* tape = nullptr);
Tensor forward_tep(const ModelParams& m, const Tensor& x, Tape* tape = nullptr);

struct TedOutput {
    Tensor probability;  // [1 x 1], read from the encoder stack only
    Tensor trajectory;   // [C x 4]; row c predicts the box after y_in[c]
};
TedOutput forward_ted(const ModelParams& m, const Tensor& x, const Tensor& y_in,
                      Tape* tape = nullptr);

// The classification path of TED without running the decoder; equals
// forward_ted(...).probability bit for bit.
Tensor forward_ted_encoder_only(const ModelParams& m, const Tensor& x, Tape* tape = nullptr);

// Architecture dispatch for inference (TED uses the encoder-only path).
Tensor forward_probability(const ModelParams& m, const Tensor& x, Tape* tape = nullptr);

// Autoregressive trajectory roll-out for visualization: feeds back its
// own predictions starting from the last observed box.
Tensor rollout_trajectory(const ModelParams& m, const Tensor& x, int steps);

}  // namespace pedcross
