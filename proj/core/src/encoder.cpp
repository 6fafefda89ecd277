#include "saicl/encoder.hpp"

#include <cassert>
#include <cmath>

#include "saicl/error.hpp"

namespace saicl {

std::string backbone_name(Backbone b) {
    switch (b) {
        case Backbone::LstmKt: return "lstm_kt";
        case Backbone::SaedpDp: return "saedp_dp";
        case Backbone::CausalTxCondDp: return "causal_tx_conddp";
    }
    return "lstm_kt";
}

Backbone backbone_from_name(const std::string& name) {
    if (name == "lstm_kt") return Backbone::LstmKt;
    if (name == "saedp_dp") return Backbone::SaedpDp;
    if (name == "causal_tx_conddp") return Backbone::CausalTxCondDp;
    throw Error("config_error", "unknown backbone '" + name + "'");
}

std::string head_name(HeadKind h) {
    switch (h) {
        case HeadKind::SharedItem: return "shared_item";
        case HeadKind::MlpItem: return "mlp_item";
        case HeadKind::DpAttention: return "dp_attention";
    }
    return "shared_item";
}

HeadKind head_from_name(const std::string& name) {
    if (name == "shared_item") return HeadKind::SharedItem;
    if (name == "mlp_item") return HeadKind::MlpItem;
    if (name == "dp_attention") return HeadKind::DpAttention;
    throw Error("config_error", "unknown head '" + name + "'");
}

void EncoderConfig::validate() const {
    if (hidden_dim < 1 || seq_len < 1) throw Error("config_error", "hidden_dim and seq_len must be >= 1");
    if (enc_dim() % resolved_heads() != 0 && backbone != Backbone::LstmKt)
        throw Error("config_error", "attention dim must be divisible by head count");
    const double p = resolved_dropout();
    if (p < 0.0 || p >= 1.0) throw Error("config_error", "dropout rate must lie in [0,1)");
    for (int c : conv_channels)
        if (c < 1) throw Error("config_error", "conv channels must be >= 1");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
        throw Error("config_error", "conv kernel must be odd and >= 1");
}

Tensor& ParamStore::param(const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw Error("param_missing", "no parameter named '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::param(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end()) throw Error("param_missing", "no parameter named '" + name + "'");
    return it->second;
}

int64_t ParamStore::total_size() const {
    int64_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
}

Var GraphParams::operator[](const std::string& name) {
    const auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    Var leaf = make_leaf(store_->param(name), trainable_, name);
    leaves_.emplace(name, leaf);
    return leaf;
}

namespace {

Tensor uniform_init(std::vector<int64_t> shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

void add_linear(ParamStore& s, const std::string& prefix, int64_t in, int64_t out, Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in));
    s.params[prefix + ".w"] = uniform_init({in, out}, b, rng);
    s.params[prefix + ".b"] = uniform_init({out}, b, rng);
}

void add_transformer_layer(ParamStore& s, int64_t d, int64_t ffn, Rng& rng) {
    add_linear(s, "tx.q", d, d, rng);
    add_linear(s, "tx.k", d, d, rng);
    add_linear(s, "tx.v", d, d, rng);
    add_linear(s, "tx.o", d, d, rng);
    s.params["tx.ln1.g"] = Tensor({d}, 1.0);
    s.params["tx.ln1.b"] = Tensor({d});
    add_linear(s, "tx.ffn1", d, ffn, rng);
    add_linear(s, "tx.ffn2", ffn, d, rng);
    s.params["tx.ln2.g"] = Tensor({d}, 1.0);
    s.params["tx.ln2.b"] = Tensor({d});
}

} // namespace

ParamStore init_params(const EncoderConfig& cfg, const FeatureSchema& schema, const TaskKind& task,
                       HeadKind head, uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0xE17C0DE));
    ParamStore s;
    const int64_t D = cfg.hidden_dim;
    const int64_t L = cfg.seq_len;
    const int64_t Hd = cfg.enc_dim();
    const double emb_bound = 1.0 / std::sqrt(static_cast<double>(D));

    s.params["in.item"] =
        uniform_init({schema.n_items + FeatureSchema::kReserved, D}, emb_bound, rng);
    if (schema.has_correct)
        s.params["in.correct"] = uniform_init({2 + FeatureSchema::kReserved, D}, emb_bound, rng);
    for (const auto& c : schema.extra_cat)
        s.params["in.cat." + c.name] =
            uniform_init({c.cardinality + FeatureSchema::kReserved, D}, emb_bound, rng);
    for (const auto& c : schema.extra_cont)
        s.params["in.cont." + c.name] = uniform_init({D}, emb_bound, rng);
    if (cfg.position_active()) s.params["in.pos"] = uniform_init({L, D}, emb_bound, rng);
    if (task.causal()) s.params["in.start"] = uniform_init({D}, emb_bound, rng);

    switch (cfg.backbone) {
        case Backbone::LstmKt: {
            const double b = 1.0 / std::sqrt(static_cast<double>(D));
            s.params["lstm.w_ih"] = uniform_init({D, 4 * D}, b, rng);
            s.params["lstm.w_hh"] = uniform_init({D, 4 * D}, b, rng);
            s.params["lstm.b"] = uniform_init({4 * D}, b, rng);
            break;
        }
        case Backbone::SaedpDp: {
            int64_t cin = D;
            for (int i = 0; i < 3; ++i) {
                const int64_t cout = cfg.conv_channels[static_cast<size_t>(i)];
                const double b = 1.0 / std::sqrt(static_cast<double>(cin * cfg.conv_kernel));
                const std::string p = "conv" + std::to_string(i + 1);
                s.params[p + ".w"] = uniform_init({cout, cin, cfg.conv_kernel}, b, rng);
                s.params[p + ".b"] = uniform_init({cout}, b, rng);
                const std::string bn = "bn" + std::to_string(i + 1);
                s.params[bn + ".g"] = Tensor({cout}, 1.0);
                s.params[bn + ".b"] = Tensor({cout});
                s.buffers[bn + ".mean"] = Tensor({cout});
                s.buffers[bn + ".var"] = Tensor({cout}, 1.0);
                cin = cout;
            }
            add_transformer_layer(s, Hd, cfg.resolved_ffn(), rng);
            break;
        }
        case Backbone::CausalTxCondDp:
            add_transformer_layer(s, D, cfg.resolved_ffn(), rng);
            break;
    }

    const int64_t Dp = cfg.resolved_proj_dim();
    add_linear(s, "po.l1", Hd, Hd, rng);
    add_linear(s, "po.l2", Hd, Dp, rng);
    add_linear(s, "pi.l", D, Dp, rng);

    switch (head) {
        case HeadKind::SharedItem:
            if (Hd != D)
                throw Error("config_error",
                            "shared item head requires encoder dim == embedding dim");
            break;
        case HeadKind::MlpItem:
            add_linear(s, "head.l1", Hd, Hd, rng);
            add_linear(s, "head.l2", Hd, schema.n_items, rng);
            break;
        case HeadKind::DpAttention:
            add_linear(s, "dpatt.l", Hd, Hd, rng);
            add_linear(s, "dpatt.v", Hd, 1, rng);
            add_linear(s, "head.l1", Hd, Hd, rng);
            add_linear(s, "head.l2", Hd, 1, rng);
            break;
    }
    return s;
}

Var embed_input(const SequenceBatch& batch, const EncoderConfig& cfg, const FeatureSchema& schema,
                GraphParams& gp) {
    const int64_t rows = batch.B * batch.L;
    std::vector<std::vector<int32_t>> index_sets;
    std::vector<Var> tables;
    index_sets.push_back(batch.items);
    tables.push_back(gp["in.item"]);
    if (schema.has_correct && !batch.correct.empty()) {
        index_sets.push_back(batch.correct);
        tables.push_back(gp["in.correct"]);
    }
    for (size_t f = 0; f < schema.extra_cat.size(); ++f) {
        index_sets.push_back(batch.extra_cat[f]);
        tables.push_back(gp["in.cat." + schema.extra_cat[f].name]);
    }
    std::vector<std::vector<double>> value_sets;
    std::vector<Var> weights;
    for (size_t f = 0; f < schema.extra_cont.size(); ++f) {
        value_sets.push_back(batch.extra_cont[f]);
        weights.push_back(gp["in.cont." + schema.extra_cont[f].name]);
    }
    Var p = embedding_sum(index_sets, tables, value_sets, weights, rows, cfg.hidden_dim);
    p = reshape(p, {batch.B, batch.L, cfg.hidden_dim});
    if (cfg.position_active()) {
        if (batch.L > cfg.seq_len)
            throw Error("config_error", "batch window longer than the configured seq_len");
        p = broadcast_add_rows(p, gp["in.pos"]);
    }
    return p;
}

Var encode_lstm(const Var& x, GraphParams& gp) {
    return lstm(x, gp["lstm.w_ih"], gp["lstm.w_hh"], gp["lstm.b"]);
}

Tensor attention_mask(const Tensor& key_valid, bool causal) {
    const int64_t B = key_valid.shape()[0], L = key_valid.shape()[1];
    Tensor allowed({B, L, L});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < L; ++i)
            for (int64_t j = 0; j < L; ++j)
                allowed[(b * L + i) * L + j] =
                    (key_valid[b * L + j] != 0.0 && (!causal || j <= i)) ? 1.0 : 0.0;
    return allowed;
}

namespace {

Var multihead_attention(const Var& x, const Tensor& allowed, int n_heads, double p_drop,
                        GraphParams& gp, bool training, Rng& rng) {
    const auto& s = x->value.shape();
    const int64_t B = s[0], L = s[1], D = s[2];
    const int64_t h = n_heads, dh = D / n_heads;
    auto split_heads = [&](const Var& v) {
        return reshape(permute_0213(reshape(v, {B, L, h, dh})), {B * h, L, dh});
    };
    Var q = split_heads(linear(x, gp["tx.q.w"], gp["tx.q.b"]));
    Var k = split_heads(linear(x, gp["tx.k.w"], gp["tx.k.b"]));
    Var v = split_heads(linear(x, gp["tx.v.w"], gp["tx.v.b"]));
    Var scores = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    scores = reshape(scores, {B, h, L, L});
    Var probs = masked_softmax_last(scores, allowed, h);
    probs = dropout(probs, p_drop, rng, training);
    Var ctx = bmm(reshape(probs, {B * h, L, L}), v);
    ctx = reshape(permute_0213(reshape(ctx, {B, h, L, dh})), {B, L, D});
    return linear(ctx, gp["tx.o.w"], gp["tx.o.b"]);
}

Var transformer_layer(const Var& x, const Tensor& allowed, int n_heads, double p_drop,
                      GraphParams& gp, bool training, Rng& rng) {
    Var attn = multihead_attention(x, allowed, n_heads, p_drop, gp, training, rng);
    Var x1 = layer_norm(add(x, dropout(attn, p_drop, rng, training)), gp["tx.ln1.g"], gp["tx.ln1.b"]);
    Var f = linear(x1, gp["tx.ffn1.w"], gp["tx.ffn1.b"]);
    f = dropout(relu(f), p_drop, rng, training);
    f = linear(f, gp["tx.ffn2.w"], gp["tx.ffn2.b"]);
    return layer_norm(add(x1, dropout(f, p_drop, rng, training)), gp["tx.ln2.g"], gp["tx.ln2.b"]);
}

} // namespace

Var encode_saedp(const Var& x, const Tensor& valid, const EncoderConfig& cfg, GraphParams& gp,
                 bool training, Rng& rng) {
    const double p_drop = cfg.resolved_dropout();
    // Masking before every conv keeps padded positions from leaking into
    // their neighbours' receptive fields.
    Var h = mask_positions(x, valid);
    for (int i = 0; i < 3; ++i) {
        const std::string c = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        h = conv1d_same(h, gp[c + ".w"], gp[c + ".b"]);
        h = batch_norm_masked(h, gp[bn + ".g"], gp[bn + ".b"], valid,
                              gp.store().buffers.at(bn + ".mean"), gp.store().buffers.at(bn + ".var"),
                              training, cfg.bn_momentum);
        h = relu(h);
        if (i < 2) h = mask_positions(h, valid);
    }
    h = mask_positions(h, valid);
    const Tensor allowed = attention_mask(valid, /*causal=*/false);
    return transformer_layer(h, allowed, cfg.resolved_heads(), p_drop, gp, training, rng);
}

Var encode_causal_tx(const Var& x, const Tensor& key_valid, const EncoderConfig& cfg,
                     GraphParams& gp, bool training, Rng& rng) {
    const Tensor allowed = attention_mask(key_valid, /*causal=*/true);
    return transformer_layer(x, allowed, cfg.resolved_heads(), cfg.resolved_dropout(), gp, training,
                             rng);
}

Var project_out(const Var& h, GraphParams& gp, bool l2_normalize) {
    Var z = linear(relu(linear(h, gp["po.l1.w"], gp["po.l1.b"])), gp["po.l2.w"], gp["po.l2.b"]);
    return l2_normalize ? l2_normalize_rows(z) : z;
}

Var project_inter(const Var& p, GraphParams& gp, bool l2_normalize) {
    Var r = linear(p, gp["pi.l.w"], gp["pi.l.b"]);
    return l2_normalize ? l2_normalize_rows(r) : r;
}

EncodeOut encode_batch(const SequenceBatch& batch, const EncoderConfig& cfg,
                       const FeatureSchema& schema, GraphParams& gp, bool training, Rng& rng) {
    EncodeOut out;
    out.P = embed_input(batch, cfg, schema, gp);
    const Tensor valid = batch.valid_mask_tensor();
    if (batch.task.causal()) {
        Var x = shift_right_with_token(out.P, gp["in.start"]);
        if (cfg.backbone == Backbone::LstmKt) {
            out.H = encode_lstm(x, gp);
        } else if (cfg.backbone == Backbone::CausalTxCondDp) {
            // Shifted keys: slot 0 is the start token (always attendable),
            // slot t holds interaction t-1.
            Tensor key_valid({batch.B, batch.L});
            for (int64_t b = 0; b < batch.B; ++b) {
                key_valid[b * batch.L] = 1.0;
                for (int64_t t = 1; t < batch.L; ++t)
                    key_valid[b * batch.L + t] = valid[b * batch.L + t - 1];
            }
            out.H = encode_causal_tx(x, key_valid, cfg, gp, training, rng);
        } else {
            throw Error("config_error", "bidirectional conv-attention backbone cannot serve a causal task");
        }
    } else {
        if (cfg.backbone == Backbone::SaedpDp) {
            out.H = encode_saedp(out.P, valid, cfg, gp, training, rng);
        } else if (cfg.backbone == Backbone::CausalTxCondDp) {
            out.H = encode_causal_tx(out.P, valid, cfg, gp, training, rng);
        } else {
            out.H = encode_lstm(out.P, gp);
        }
    }
    return out;
}

Var item_logits(const Var& h_rows, HeadKind head, GraphParams& gp, int n_items) {
    switch (head) {
        case HeadKind::SharedItem: {
            Var table = slice_rows(gp["in.item"], 0, n_items);
            return matmul_nt(h_rows, table);
        }
        case HeadKind::MlpItem: {
            Var z = relu(linear(h_rows, gp["head.l1.w"], gp["head.l1.b"]));
            return linear(z, gp["head.l2.w"], gp["head.l2.b"]);
        }
        case HeadKind::DpAttention:
            throw Error("config_error", "sequence head cannot produce per-item logits");
    }
    throw Error("config_error", "unreachable head kind");
}

Var dp_sequence_logits(const Var& h, const Tensor& valid, GraphParams& gp) {
    const auto& s = h->value.shape();
    const int64_t B = s[0], L = s[1], Hd = s[2];
    Var scores = linear(tanh_op(linear(h, gp["dpatt.l.w"], gp["dpatt.l.b"])),
                        gp["dpatt.v.w"], gp["dpatt.v.b"]); // (B,L,1)
    scores = reshape(scores, {B, L});
    Var weights = masked_softmax_last(scores, valid, 1);
    Var pooled = reshape(bmm(reshape(weights, {B, 1, L}), h), {B, Hd});
    Var z = relu(linear(pooled, gp["head.l1.w"], gp["head.l1.b"]));
    return reshape(linear(z, gp["head.l2.w"], gp["head.l2.b"]), {B});
}

std::vector<double> predict_all_items(const Tensor& h, const ParamStore& store, HeadKind head,
                                      int n_items) {
    const int64_t Hd = h.size();
    std::vector<double> probs(static_cast<size_t>(n_items));
    auto push_sigmoid = [&](int64_t q, double logit) {
        probs[static_cast<size_t>(q)] = 1.0 / (1.0 + std::exp(-logit));
    };
    if (head == HeadKind::SharedItem) {
        const Tensor& table = store.param("in.item");
        const int64_t D = table.shape()[1];
        if (D != Hd) throw Error("config_error", "shared head dim mismatch");
        for (int64_t q = 0; q < n_items; ++q) {
            const double* row = table.data() + q * D;
            double acc = 0.0;
            for (int64_t d = 0; d < D; ++d) acc += row[d] * h[d];
            push_sigmoid(q, acc);
        }
        return probs;
    }
    if (head == HeadKind::MlpItem) {
        const Tensor& w1 = store.param("head.l1.w");
        const Tensor& b1 = store.param("head.l1.b");
        const Tensor& w2 = store.param("head.l2.w");
        const Tensor& b2 = store.param("head.l2.b");
        std::vector<double> z(static_cast<size_t>(w1.shape()[1]));
        for (int64_t j = 0; j < w1.shape()[1]; ++j) {
            double acc = b1[j];
            for (int64_t d = 0; d < Hd; ++d) acc += h[d] * w1.at(d, j);
            z[static_cast<size_t>(j)] = acc > 0.0 ? acc : 0.0;
        }
        for (int64_t q = 0; q < n_items; ++q) {
            double acc = b2[q];
            for (size_t j = 0; j < z.size(); ++j) acc += z[j] * w2.at(static_cast<int64_t>(j), q);
            push_sigmoid(q, acc);
        }
        return probs;
    }
    throw Error("config_error", "sequence head cannot score items");
}

} // namespace saicl
