#pragma once

#include "cirmask/backbone.hpp"
#include "cirmask/config.hpp"
#include "cirmask/data_io.hpp"
#include "cirmask/inversion.hpp"
#include "cirmask/masking.hpp"
#include "cirmask/objectives.hpp"
#include "cirmask/pos_tagger.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cirmask {

struct TrainConfig {
    int batch_size = 128;
    int epochs = 10;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::string lr_schedule = "constant";
    double grad_clip = 0.0;
    double alpha = 0.5;
    double tau = 0.3;
    double temperature = 0.0; // 0 = 1 / backbone logit scale
    int hidden_dim = 0;       // 0 = 4 × token width
    double dropout = 0.0;
    std::uint64_t seed = 0;
    std::size_t limit = 250000;
    std::string manifest;
    std::string cache_dir;
    std::string checkpoint_dir;
    std::string resume;
    std::string config_hash;
};

TrainConfig train_config_from(const ResolvedConfig& cfg);

// Backbones and helpers named by a resolved config.
std::shared_ptr<const Backbone> backbone_from(const ResolvedConfig& cfg);
std::shared_ptr<const RelevanceProvider> relevance_provider_from(const ResolvedConfig& cfg,
                                                                 std::shared_ptr<const Backbone> backbone);

class AdamW {
public:
    struct Options {
        double weight_decay = 0.01;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW() = default;
    AdamW(const InversionNetwork::Parameters& like, Options options);

    // p ← p − lr·(m̂ / (√v̂ + eps) + weight_decay·p)
    void step(InversionNetwork::Parameters& params, const InversionNetwork::Parameters& grads, double lr);

    long long steps() const { return steps_; }
    const InversionNetwork::Parameters& first_moment() const { return m_; }
    const InversionNetwork::Parameters& second_moment() const { return v_; }
    const Options& options() const { return options_; }

    void restore(InversionNetwork::Parameters m, InversionNetwork::Parameters v, long long steps);

private:
    Options options_;
    InversionNetwork::Parameters m_, v_;
    long long steps_ = 0;
};

struct CheckpointMeta {
    int epoch = 0;          // last completed epoch, 1-based
    long long step = 0;     // optimizer steps taken
    std::string backbone;   // backbone name
    std::string backbone_fingerprint;
    std::string config_hash;
};

struct Checkpoint {
    InversionNetwork net;
    std::optional<AdamW> optimizer;
    CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const InversionNetwork& net, const AdamW* optimizer,
                     const CheckpointMeta& meta);

// When `backbone` is given the network widths must match it (ConfigError).
Checkpoint load_checkpoint(const std::string& path, const BackboneInfo* backbone = nullptr);

struct TrainingSample {
    Image image; // preprocessed at the backbone resolution
    std::string caption;
};

struct SkipCounts {
    int no_maskable_word = 0;
    int relevance_unavailable = 0;
    int query_too_long = 0;
    int undecodable = 0;

    int total() const { return no_maskable_word + relevance_unavailable + query_too_long + undecodable; }
    SkipCounts& operator+=(const SkipCounts& o);
};

// Masked pairs plus the frozen image features they need. Samples that cannot
// be masked are skipped, so the batch may shrink.
struct PreparedBatch {
    std::vector<MaskedPairBundle> bundles;
    std::vector<int> kept; // indices into the input samples
    FeatureBatch originals; // f^img of the unmasked images
    FeatureBatch masked;    // f^M of the mixed images
    SkipCounts skips;

    int size() const { return static_cast<int>(kept.size()); }
};

PreparedBatch prepare_batch(std::span<const TrainingSample> samples, const Backbone& backbone,
                            const PosTagger& tagger, const RelevanceProvider& provider, double tau,
                            std::uint64_t partner_seed);

// Forward through both branches. When `grads` is given, gradients of the
// total w.r.t. every φ parameter are accumulated into it.
LossBundle batch_loss(const PreparedBatch& batch, const InversionNetwork& net, const Backbone& backbone,
                      double alpha, double temperature, InversionNetwork::Parameters* grads = nullptr,
                      std::mt19937_64* dropout_rng = nullptr);

struct StepRecord {
    long long step = 0;
    int epoch = 0;
    int batch = 0; // samples kept
    LossBundle loss;
};

struct TrainReport {
    std::vector<StepRecord> history;
    std::vector<SkipCounts> epoch_skips;
    std::vector<double> epoch_mean_total;
    int skipped_steps = 0;
    double wall_seconds = 0.0;
    std::string final_checkpoint;
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
    std::size_t dataset_size = 0;
    std::size_t dropped_records = 0;
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const std::string&)> warn;
};

class Trainer {
public:
    Trainer(TrainConfig config, std::shared_ptr<const Backbone> backbone, std::shared_ptr<const PosTagger> tagger,
            std::shared_ptr<const RelevanceProvider> provider);

    // Runs every remaining epoch, writing epoch-NNN.safetensors and
    // last.safetensors into the checkpoint directory. Throws IoError before
    // the first step if the directory is not writable.
    TrainReport run(const PairDataset& data, const TrainHooks& hooks = {});

    const InversionNetwork& network() const { return net_; }
    const TrainConfig& config() const { return config_; }
    double temperature() const;

private:
    double learning_rate(long long step, long long total_steps) const;

    TrainConfig config_;
    std::shared_ptr<const Backbone> backbone_;
    std::shared_ptr<const PosTagger> tagger_;
    std::shared_ptr<const RelevanceProvider> provider_;
    InversionNetwork net_;
    AdamW optimizer_;
    int start_epoch_ = 0;
    long long step_ = 0;
};

} // namespace cirmask
