#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "saicl/autodiff.hpp"
#include "saicl/data.hpp"
#include "saicl/rng.hpp"

namespace saicl {

enum class Backbone { LstmKt, SaedpDp, CausalTxCondDp };
enum class HeadKind { SharedItem, MlpItem, DpAttention };

std::string backbone_name(Backbone b);
Backbone backbone_from_name(const std::string& name);
std::string head_name(HeadKind h);
HeadKind head_from_name(const std::string& name);

struct EncoderConfig {
    Backbone backbone = Backbone::LstmKt;
    int hidden_dim = 100; // input embedding dim; also LSTM hidden / attention d_model
    int seq_len = 100;
    int heads = 0;           // 0 = backbone default (4 conv-attention, 5 causal)
    int ffn_dim = 0;         // 0 = backbone default (128 conv-attention, 100 causal)
    double dropout_rate = -1.0; // <0 = backbone default (0.1 / 0.2 / none)
    std::array<int, 3> conv_channels{32, 16, 32};
    int conv_kernel = 7;
    bool use_position = true; // position embedding, attention backbones only
    int proj_dim = 0;         // contrastive projection dim; 0 = hidden_dim
    double bn_momentum = 0.1;

    int enc_dim() const { return backbone == Backbone::SaedpDp ? conv_channels[2] : hidden_dim; }
    int resolved_heads() const {
        if (heads > 0) return heads;
        return backbone == Backbone::SaedpDp ? 4 : 5;
    }
    int resolved_ffn() const {
        if (ffn_dim > 0) return ffn_dim;
        return backbone == Backbone::SaedpDp ? 128 : 100;
    }
    double resolved_dropout() const {
        if (dropout_rate >= 0.0) return dropout_rate;
        switch (backbone) {
            case Backbone::SaedpDp: return 0.1;
            case Backbone::CausalTxCondDp: return 0.2;
            case Backbone::LstmKt: return 0.0;
        }
        return 0.0;
    }
    int resolved_proj_dim() const { return proj_dim > 0 ? proj_dim : hidden_dim; }
    bool position_active() const { return use_position && backbone != Backbone::LstmKt; }
    void validate() const;
};

// Named parameter / buffer arrays. std::map keeps iteration order stable so
// optimizer sweeps and checkpoints are deterministic.
struct ParamStore {
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers; // batch-norm running statistics

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    bool has(const std::string& name) const { return params.count(name) != 0; }
    int64_t total_size() const;
};

ParamStore init_params(const EncoderConfig& cfg, const FeatureSchema& schema, const TaskKind& task,
                       HeadKind head, uint64_t seed);

// Per-graph view of a ParamStore: leaves are created on first use and cached
// so shared parameters accumulate gradients correctly.
class GraphParams {
public:
    GraphParams(ParamStore& store, bool trainable) : store_(&store), trainable_(trainable) {}
    Var operator[](const std::string& name);
    ParamStore& store() { return *store_; }
    const std::map<std::string, Var>& leaves() const { return leaves_; }

private:
    ParamStore* store_;
    bool trainable_;
    std::map<std::string, Var> leaves_;
};

// Sum of feature embeddings per position (plus the position embedding for
// attention backbones). Padding positions select the reserved pad rows.
Var embed_input(const SequenceBatch& batch, const EncoderConfig& cfg, const FeatureSchema& schema,
                GraphParams& gp);

Var encode_lstm(const Var& x, GraphParams& gp);
Var encode_saedp(const Var& x, const Tensor& valid, const EncoderConfig& cfg, GraphParams& gp,
                 bool training, Rng& rng);
Var encode_causal_tx(const Var& x, const Tensor& key_valid, const EncoderConfig& cfg,
                     GraphParams& gp, bool training, Rng& rng);

Var project_out(const Var& h, GraphParams& gp, bool l2_normalize = false);
Var project_inter(const Var& p, GraphParams& gp, bool l2_normalize = false);

// allowed[b,i,j] = key_valid[b,j] && (!causal || j <= i)
Tensor attention_mask(const Tensor& key_valid, bool causal);

struct EncodeOut {
    Var P; // input embeddings, aligned with the batch positions
    Var H; // context states; causal tasks consume the start-shifted stream
};

// Full input->hidden pipeline for a batch: embeddings, start-token shift for
// causal tasks, backbone encoding.
EncodeOut encode_batch(const SequenceBatch& batch, const EncoderConfig& cfg,
                       const FeatureSchema& schema, GraphParams& gp, bool training, Rng& rng);

// Item-conditioned logits from context rows (N,enc_dim) -> (N,Q).
// SharedItem ties the output weights to the item embedding table.
Var item_logits(const Var& h_rows, HeadKind head, GraphParams& gp, int n_items);

// Attention-weighted pooling over valid positions, then MLP -> one logit per
// sequence (B,).
Var dp_sequence_logits(const Var& h, const Tensor& valid, GraphParams& gp);

// Probabilities for every item from one student context vector; O(dim * Q)
// per call and independent of sequence length.
std::vector<double> predict_all_items(const Tensor& h, const ParamStore& store, HeadKind head,
                                      int n_items);

} // namespace saicl
