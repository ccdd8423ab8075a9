#include "pedcross/model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "pedcross/error.hpp"

namespace pedcross {

namespace {
namespace op = pedcross::ops;
}

std::string arch_name(Arch a) {
    switch (a) {
        case Arch::kTeo: return "teo";
        case Arch::kTep: return "tep";
        case Arch::kTed: return "ted";
    }
    throw ConfigError("unknown architecture enum");
}

Arch arch_from_name(const std::string& name) {
    if (name == "teo") return Arch::kTeo;
    if (name == "tep") return Arch::kTep;
    if (name == "ted") return Arch::kTed;
    throw ConfigError("unknown architecture '" + name + "' (expected teo, tep, or ted)");
}

void ModelConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ffn < 1 || obs_len < 1 || pe_len < 1) {
        throw ConfigError("model dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (d_cls < 0) throw ConfigError("d_cls must be >= 0");
    if (arch == Arch::kTep && (pool_window < 1 || pool_stride < 1 || min_pooled_len < 1)) {
        throw ConfigError("TEP pooling parameters must be >= 1");
    }
    if (pe_len < obs_len) throw ConfigError("pe_len must cover obs_len");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
}

Tensor positional_encoding(int t_max, int d) {
    if (t_max < 1 || d < 1) throw ShapeError("positional_encoding requires positive dimensions");
    Tensor pe({t_max, d});
    double* p = pe.data();
    for (int pos = 0; pos < t_max; ++pos) {
        for (int c = 0; c < d; ++c) {
            const int pair = c - (c % 2);  // 2i
            const double angle = pos * std::pow(10000.0, -static_cast<double>(pair) / d);
            p[pos * d + c] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Tensor causal_mask(int rows) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Tensor m({rows, rows});
    double* p = m.data();
    for (int i = 0; i < rows; ++i)
        for (int j = i + 1; j < rows; ++j) p[i * rows + j] = neg_inf;
    return m;
}

namespace {

Tensor init_matrix(std::vector<int> shape, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / shape[0]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = dist(rng);
    return t;
}

EmbeddingParams init_embedding(const ModelConfig& cfg, std::mt19937_64& rng) {
    EmbeddingParams p;
    p.we = init_matrix({4, cfg.d_model}, rng);
    p.be = Tensor({cfg.d_model});
    p.pe = positional_encoding(cfg.pe_len, cfg.d_model);
    return p;
}

AttentionParams init_attention(const ModelConfig& cfg, std::mt19937_64& rng) {
    AttentionParams p;
    for (int h = 0; h < cfg.n_heads; ++h) {
        p.wq.push_back(init_matrix({cfg.d_model, cfg.head_dim()}, rng));
        p.wk.push_back(init_matrix({cfg.d_model, cfg.head_dim()}, rng));
        p.wv.push_back(init_matrix({cfg.d_model, cfg.head_dim()}, rng));
    }
    p.wo = init_matrix({cfg.d_model, cfg.d_model}, rng);
    return p;
}

LayerNormParams init_layer_norm(int d) {
    return {Tensor::full({d}, 1.0), Tensor({d})};
}

FfnParams init_ffn(const ModelConfig& cfg, std::mt19937_64& rng) {
    FfnParams p;
    p.w1 = init_matrix({cfg.d_model, cfg.d_ffn}, rng);
    p.b1 = Tensor({cfg.d_ffn});
    p.w2 = init_matrix({cfg.d_ffn, cfg.d_model}, rng);
    p.b2 = Tensor({cfg.d_model});
    return p;
}

void collect_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                       const AttentionParams& p) {
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        const std::string hp = prefix + ".h" + std::to_string(h);
        out.emplace_back(hp + ".wq", p.wq[h]);
        out.emplace_back(hp + ".wk", p.wk[h]);
        out.emplace_back(hp + ".wv", p.wv[h]);
    }
    out.emplace_back(prefix + ".wo", p.wo);
}

void collect_ln(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const LayerNormParams& p) {
    out.emplace_back(prefix + ".gain", p.gain);
    out.emplace_back(prefix + ".bias", p.bias);
}

void collect_ffn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                 const FfnParams& p) {
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams m;
    m.config = cfg;
    m.embed = init_embedding(cfg, rng);
    if (cfg.separate_decoder_embedding && cfg.arch == Arch::kTed) {
        m.dec_embed = init_embedding(cfg, rng);
    }
    for (int n = 0; n < cfg.n_layers; ++n) {
        EncoderLayerParams lp;
        lp.mha = init_attention(cfg, rng);
        lp.ln1 = init_layer_norm(cfg.d_model);
        lp.ln2 = init_layer_norm(cfg.d_model);
        lp.ffn = init_ffn(cfg, rng);
        m.encoder.push_back(std::move(lp));
    }
    if (cfg.arch == Arch::kTed) {
        for (int n = 0; n < cfg.n_layers; ++n) {
            DecoderLayerParams lp;
            lp.self_mha = init_attention(cfg, rng);
            lp.cross_mha = init_attention(cfg, rng);
            lp.ln1 = init_layer_norm(cfg.d_model);
            lp.ln2 = init_layer_norm(cfg.d_model);
            lp.ln3 = init_layer_norm(cfg.d_model);
            lp.ffn = init_ffn(cfg, rng);
            m.decoder.push_back(std::move(lp));
        }
        m.traj_w = init_matrix({cfg.d_model, 4}, rng);
        m.traj_b = Tensor({4});
    }
    m.head.w1 = init_matrix({cfg.d_model, cfg.cls_dim()}, rng);
    m.head.b1 = Tensor({cfg.cls_dim()});
    m.head.w2 = init_matrix({cfg.cls_dim(), 1}, rng);
    m.head.b2 = Tensor({1});
    return m;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.we", embed.we);
    out.emplace_back("embed.be", embed.be);
    if (dec_embed) {
        out.emplace_back("dec_embed.we", dec_embed->we);
        out.emplace_back("dec_embed.be", dec_embed->be);
    }
    for (std::size_t n = 0; n < encoder.size(); ++n) {
        const std::string lp = "enc." + std::to_string(n);
        collect_attention(out, lp + ".mha", encoder[n].mha);
        collect_ln(out, lp + ".ln1", encoder[n].ln1);
        collect_ln(out, lp + ".ln2", encoder[n].ln2);
        collect_ffn(out, lp + ".ffn", encoder[n].ffn);
    }
    for (std::size_t n = 0; n < decoder.size(); ++n) {
        const std::string lp = "dec." + std::to_string(n);
        collect_attention(out, lp + ".self", decoder[n].self_mha);
        collect_attention(out, lp + ".cross", decoder[n].cross_mha);
        collect_ln(out, lp + ".ln1", decoder[n].ln1);
        collect_ln(out, lp + ".ln2", decoder[n].ln2);
        collect_ln(out, lp + ".ln3", decoder[n].ln3);
        collect_ffn(out, lp + ".ffn", decoder[n].ffn);
    }
    if (traj_w.defined()) {
        out.emplace_back("dec.out.w", traj_w);
        out.emplace_back("dec.out.b", traj_b);
    }
    out.emplace_back("head.w1", head.w1);
    out.emplace_back("head.b1", head.b1);
    out.emplace_back("head.w2", head.w2);
    out.emplace_back("head.b2", head.b2);
    return out;
}

std::vector<std::vector<double>> snapshot_values(const ModelParams& m) {
    std::vector<std::vector<double>> snap;
    for (const auto& [name, t] : m.named_parameters()) snap.push_back(t.values());
    return snap;
}

void restore_values(ModelParams& m, const std::vector<std::vector<double>>& snapshot) {
    const auto params = m.named_parameters();
    if (params.size() != snapshot.size()) {
        throw ShapeError("snapshot parameter count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].second.values().size() != snapshot[i].size()) {
            throw ShapeError("snapshot size mismatch for " + params[i].first);
        }
        params[i].second.values() = snapshot[i];
    }
}

Tensor embed_input(const Tensor& x, const EmbeddingParams& p, Tape* tape) {
    const int t = x.rows();
    if (x.rank() != 2 || x.cols() != p.we.rows()) {
        throw ShapeError("embed_input expects [T x " + std::to_string(p.we.rows()) + "], got " +
                         x.shape_str());
    }
    if (t > p.pe.rows()) {
        throw ShapeError("sequence length " + std::to_string(t) +
                         " exceeds positional-encoding table " + p.pe.shape_str());
    }
    Tensor e = op::linear(x, p.we, p.be, tape);
    Tensor pe_slice = op::slice_rows(p.pe, 0, t);  // constant, not recorded
    return op::add(e, pe_slice, tape);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                 Tape* tape) {
    if (q.cols() != k.cols()) {
        throw ShapeError("attention query/key width mismatch: " + q.shape_str() + " vs " +
                         k.shape_str());
    }
    if (k.rows() != v.rows()) {
        throw ShapeError("attention key/value length mismatch: " + k.shape_str() + " vs " +
                         v.shape_str());
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores = op::scale(op::matmul(q, op::transpose(k, tape), tape), inv_sqrt_dk, tape);
    Tensor weights = op::masked_softmax(scores, mask, tape);
    return op::matmul(weights, v, tape);
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                            const Tensor& mask, Tape* tape) {
    std::vector<Tensor> heads;
    heads.reserve(p.wq.size());
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        Tensor qh = op::matmul(q_in, p.wq[h], tape);
        Tensor kh = op::matmul(kv_in, p.wk[h], tape);
        Tensor vh = op::matmul(kv_in, p.wv[h], tape);
        heads.push_back(attention(qh, kh, vh, mask, tape));
    }
    return op::matmul(op::concat_cols(heads, tape), p.wo, tape);
}

namespace {

Tensor ffn_forward(const Tensor& h, const FfnParams& p, Tape* tape) {
    return op::linear(op::relu(op::linear(h, p.w1, p.b1, tape), tape), p.w2, p.b2, tape);
}

Tensor sublayer_norm(const Tensor& residual, const Tensor& out, const LayerNormParams& ln,
                     const ModelConfig& cfg, Tape* tape) {
    return op::layer_norm(op::add(residual, out, tape), ln.gain, ln.bias, cfg.ln_eps, tape);
}

}  // namespace

Tensor encoder_layer(const Tensor& h, const EncoderLayerParams& p, const ModelConfig& cfg,
                     Tape* tape) {
    Tensor a = multi_head_attention(h, h, p.mha, Tensor(), tape);
    a = op::dropout(a, cfg.dropout, tape);
    Tensor h1 = sublayer_norm(h, a, p.ln1, cfg, tape);
    Tensor f = op::dropout(ffn_forward(h1, p.ffn, tape), cfg.dropout, tape);
    return sublayer_norm(h1, f, p.ln2, cfg, tape);
}

Tensor encoder_pooling_layer(const Tensor& h, const EncoderLayerParams& p, const ModelConfig& cfg,
                             Tape* tape) {
    const int len = h.rows();
    Tensor q = h;
    if (len >= cfg.pool_window) {
        const int pooled = (len - cfg.pool_window) / cfg.pool_stride + 1;
        if (pooled >= cfg.min_pooled_len) {
            q = op::strided_mean_pool(h, cfg.pool_window, cfg.pool_stride, tape);
        }
    }
    Tensor a = multi_head_attention(q, h, p.mha, Tensor(), tape);
    a = op::dropout(a, cfg.dropout, tape);
    Tensor h1 = sublayer_norm(q, a, p.ln1, cfg, tape);
    Tensor f = op::dropout(ffn_forward(h1, p.ffn, tape), cfg.dropout, tape);
    return sublayer_norm(h1, f, p.ln2, cfg, tape);
}

Tensor decoder_layer(const Tensor& h_dec, const Tensor& enc_memory, const DecoderLayerParams& p,
                     const ModelConfig& cfg, Tape* tape) {
    Tensor mask = causal_mask(h_dec.rows());
    Tensor sa = multi_head_attention(h_dec, h_dec, p.self_mha, mask, tape);
    sa = op::dropout(sa, cfg.dropout, tape);
    Tensor h1 = sublayer_norm(h_dec, sa, p.ln1, cfg, tape);
    Tensor ca = multi_head_attention(h1, enc_memory, p.cross_mha, Tensor(), tape);
    ca = op::dropout(ca, cfg.dropout, tape);
    Tensor h2 = sublayer_norm(h1, ca, p.ln2, cfg, tape);
    Tensor f = op::dropout(ffn_forward(h2, p.ffn, tape), cfg.dropout, tape);
    return sublayer_norm(h2, f, p.ln3, cfg, tape);
}

Tensor classify(const Tensor& enc_out, const HeadParams& p, Tape* tape) {
    Tensor pooled = op::mean_pool_time(enc_out, tape);
    Tensor hidden = op::relu(op::linear(pooled, p.w1, p.b1, tape), tape);
    return op::sigmoid(op::linear(hidden, p.w2, p.b2, tape), tape);
}

std::vector<int> pooled_lengths(const ModelConfig& cfg) {
    std::vector<int> lengths;
    int len = cfg.obs_len;
    for (int n = 0; n < cfg.n_layers; ++n) {
        if (cfg.arch == Arch::kTep && len >= cfg.pool_window) {
            const int pooled = (len - cfg.pool_window) / cfg.pool_stride + 1;
            if (pooled >= cfg.min_pooled_len) len = pooled;
        }
        lengths.push_back(len);
    }
    return lengths;
}

Tensor encode(const ModelParams& m, const Tensor& x, Tape* tape) {
    Tensor h = embed_input(x, m.embed, tape);
    for (const EncoderLayerParams& layer : m.encoder) {
        h = m.config.arch == Arch::kTep ? encoder_pooling_layer(h, layer, m.config, tape)
                                        : encoder_layer(h, layer, m.config, tape);
    }
    return h;
}

Tensor forward_teo(const ModelParams& m, const Tensor& x, Tape* tape) {
    return classify(encode(m, x, tape), m.head, tape);
}

Tensor forward_tep(const ModelParams& m, const Tensor& x, Tape* tape) {
    return classify(encode(m, x, tape), m.head, tape);
}

TedOutput forward_ted(const ModelParams& m, const Tensor& x, const Tensor& y_in, Tape* tape) {
    if (m.config.arch != Arch::kTed) throw ConfigError("forward_ted on a non-TED model");
    Tensor memory = encode(m, x, tape);
    TedOutput out;
    out.probability = classify(memory, m.head, tape);
    const EmbeddingParams& de = m.dec_embed ? *m.dec_embed : m.embed;
    Tensor d = embed_input(y_in, de, tape);
    for (const DecoderLayerParams& layer : m.decoder) {
        d = decoder_layer(d, memory, layer, m.config, tape);
    }
    out.trajectory = op::linear(d, m.traj_w, m.traj_b, tape);
    return out;
}

Tensor forward_ted_encoder_only(const ModelParams& m, const Tensor& x, Tape* tape) {
    if (m.config.arch != Arch::kTed) throw ConfigError("forward_ted_encoder_only on a non-TED model");
    return classify(encode(m, x, tape), m.head, tape);
}

Tensor forward_probability(const ModelParams& m, const Tensor& x, Tape* tape) {
    switch (m.config.arch) {
        case Arch::kTeo: return forward_teo(m, x, tape);
        case Arch::kTep: return forward_tep(m, x, tape);
        case Arch::kTed: return forward_ted_encoder_only(m, x, tape);
    }
    throw ConfigError("unknown architecture enum");
}

Tensor rollout_trajectory(const ModelParams& m, const Tensor& x, int steps) {
    if (m.config.arch != Arch::kTed) throw ConfigError("rollout_trajectory on a non-TED model");
    if (steps < 1) throw ShapeError("rollout_trajectory needs steps >= 1");
    Tensor memory = encode(m, x, nullptr);
    const EmbeddingParams& de = m.dec_embed ? *m.dec_embed : m.embed;
    std::vector<double> fed(x.values().end() - 4, x.values().end());  // last observed box
    Tensor result({steps, 4});
    for (int s = 0; s < steps; ++s) {
        Tensor y_in({s + 1, 4}, fed);
        Tensor d = embed_input(y_in, de, nullptr);
        for (const DecoderLayerParams& layer : m.decoder) {
            d = decoder_layer(d, memory, layer, m.config, nullptr);
        }
        Tensor traj = op::linear(d, m.traj_w, m.traj_b, nullptr);
        for (int j = 0; j < 4; ++j) {
            const double v = traj.at(s, j);
            result.at(s, j) = v;
            fed.push_back(v);
        }
    }
    return result;
}

}  // namespace pedcross
