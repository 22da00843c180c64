#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "v2lab/anchor.hpp"
#include "v2lab/config.hpp"
#include "v2lab/decoder.hpp"
#include "v2lab/losses.hpp"
#include "v2lab/matcher.hpp"
#include "v2lab/synth.hpp"

namespace v2lab {

enum class ExpertKind { Anchor, Visual, Fusion };

std::string to_string(ExpertKind k);
ExpertKind expert_kind_from_string(const std::string& s);  // throws on unknown name

/// One candidate mask producer: a prompt source plus its own decoder weights.
/// The anchor expert reuses the pretrained point decoder unchanged and has no
/// matcher; the other two own trained copies of both parameter sets.
struct Expert {
    ExpertKind kind = ExpertKind::Anchor;
    DecoderParams decoder;
    std::optional<VPMatcherParams> matcher;
};

struct TrainConfig {
    double lr = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.05;
    double grad_clip_norm = 1.0;
    int epochs = 24;
    int batch_size = 8;
    int grad_accum = 1;
    double warmup_ratio = 0.05;
    int max_steps = 0;  // optional hard cap on optimizer steps; 0 = epochs decide
    LossWeights loss;
    AnchorConfig anchor;  // geometric tokens consumed by the fusion expert
    std::uint64_t seed = 7;

    void validate() const;  // throws std::invalid_argument naming the field
    static TrainConfig from_config(const KeyValueConfig& cfg);
    KeyValueConfig to_config() const;
};

/// Linear warmup from 0 over warmup_ratio * total_steps, then half-cosine
/// decay from lr to 0 at total_steps. Continuous at the junction.
double lr_at_step(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

/// Decoupled weight-decay adaptive-moment optimizer over leaf variables.
/// Parameters that carry no gradient in a window are left untouched
/// (no moment update, no decay).
class AdamW {
   public:
    AdamW(std::vector<nn::Var> params, double beta1, double beta2, double weight_decay,
          double eps = 1e-8);

    void zero_grad();
    void scale_grads(double factor);
    /// Global-norm clip across every accumulated gradient; returns the
    /// pre-clip norm.
    double clip_grad_norm(double max_norm);
    void step(double lr);

    std::size_t n_params() const { return slots_.size(); }

   private:
    struct Slot {
        nn::Var p;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    double beta1_;
    double beta2_;
    double weight_decay_;
    double eps_;
    std::int64_t t_ = 0;
};

/// One CSV row per optimizer step.
struct TrainLogRow {
    std::int64_t step = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_v = 0.0;  // region-feature contrastive term
    double loss_s = 0.0;  // structural term
    double loss_m = 0.0;  // target mask term
    double grad_norm = 0.0;
};

std::string train_log_header();
std::string train_log_line(const TrainLogRow& row);
void write_train_log(const std::vector<TrainLogRow>& rows, const std::string& path);

/// One dataset pair with both per-view feature grids precomputed: the wide
/// decoder-facing grids and the compact matching-facing grids.
struct PairSample {
    ViewPair pair;
    FeatureGrid feat_q;
    FeatureGrid feat_t;
    FeatureGrid feat_qa;
    FeatureGrid feat_ta;
};

PairSample prepare_sample(const ViewPair& pair);
std::vector<PairSample> prepare_samples(const std::vector<ViewPair>& pairs);

/// Region feature of a mask over a feature grid, relaxing the foreground
/// threshold (0.5 -> 0.25 -> 0.1 -> 0.01) until some patch qualifies.
/// Throws only if the mask has no foreground at all.
std::vector<double> pooled_region_feature(const FeatureGrid& feat, const Mask& m);

/// Trains a point-prompted decoder on single-view samples (each view of each
/// pair, prompted with a random ground-truth foreground pixel). The result
/// backs the anchor expert and initializes the trainable experts' decoders.
/// Aborts with the step index if the loss turns non-finite.
DecoderParams pretrain_point_decoder(const std::vector<PairSample>& data, const TrainConfig& cfg,
                                     std::vector<TrainLogRow>* log = nullptr);

/// Mean held-out IoU of the point decoder prompted with a deterministic
/// in-object point (both views of every pair).
double eval_point_decoder(DecoderParams& params, const std::vector<PairSample>& data);

/// Optimizes matcher + decoder with the combined objective. The anchor kind
/// is rejected (training-free). The fusion expert prepends the geometric
/// point tokens of cfg.anchor to the visual prompt. Deterministic per seed.
/// A resumed run passes the previously trained expert and the step count it
/// stopped at; training continues until the configured total step count,
/// with fresh optimizer moments.
Expert train_expert(ExpertKind kind, const std::vector<PairSample>& data, const TrainConfig& cfg,
                    const DecoderParams& point_decoder, std::vector<TrainLogRow>* log = nullptr,
                    std::int64_t start_step = 0, const Expert* resume_from = nullptr);

/// Anchor expert = pretrained point decoder, no matcher, no training.
Expert make_anchor_expert(const DecoderParams& point_decoder);

/// Prompt construction + decode + threshold for one pair.
PromptEmbedding build_prompt(Expert& expert, const PairSample& s, const AnchorConfig& anchor_cfg);
Mask predict_mask(Expert& expert, const PairSample& s, const AnchorConfig& anchor_cfg);

/// Mean IoU of predicted target masks against ground truth.
double eval_expert(Expert& expert, const std::vector<PairSample>& data,
                   const AnchorConfig& anchor_cfg);

}  // namespace v2lab
