#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meud/dataset.hpp"
#include "meud/evaluation.hpp"
#include "meud/ff_pretrain.hpp"
#include "meud/network.hpp"
#include "meud/training.hpp"

namespace meud {

struct EvalConfig {
    int trust_k = 5;
    int knn_k = 5;
    std::size_t trust_cap = 2000;  // trustworthiness subsample cap (0 = no cap)
    bool evaluate_all_rows = false;  // widen from the positive half to all m rows
    bool neutral_test_embedding = false;  // zero the label block of test samples
};

/// Everything a train/sweep/eval run needs. Populated from a flat
/// `key = value` config file and/or CLI flags; CLI flags win.
struct ExperimentConfig {
    // dataset source
    std::string format = "synth";  // idx | cifar10 | synth
    std::string dataset_name;      // defaults from the format
    std::string dataset_dir;
    std::string train_images, train_labels, test_images, test_labels;
    std::vector<std::string> cifar_train_bins;
    std::string cifar_test_bin;
    int label_offset = 0;  // subtracted from raw IDX labels (EMNIST Letters: 1)
    std::size_t train_limit = 0;  // 0 = use everything
    std::size_t test_limit = 0;
    bool shuffle_rows = true;  // seeded row sampling before the positive/negative split
    std::uint64_t dataset_seed = 12345;  // synthetic-data generation seed

    // synthetic data
    std::string synth_kind = "blobs";  // blobs | digits
    int synth_classes = 10;
    int synth_per_class = 60;
    int synth_test_per_class = 20;
    std::size_t synth_features = 64;
    double synth_spread = 0.05;
    std::size_t synth_digits_count = 1200;
    std::size_t synth_digits_test = 300;

    // model family
    std::vector<Variant> variants = {Variant::BaselineAE, Variant::MEUD, Variant::MEUD_FF,
                                     Variant::MEUD_Coop, Variant::MEUD_FF_Coop};
    std::vector<std::size_t> r_values;  // defaults to 25,50,...,500
    std::size_t depth_s = 4;
    // explicit encoder schedule n..r, replacing the geometric interpolation;
    // only usable when every requested r matches its last entry
    std::vector<std::size_t> encoder_override;
    std::size_t ff_matrices = 0;  // 0 = auto (s-1 shallow models)
    bool mirrored_negatives = false;
    bool band_ring = false;

    FFLayerConfig ff;
    TrainConfig train;
    EvalConfig eval;

    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "out";
    int jobs = 1;

    ExperimentConfig();
    void validate_for_run() const;
    std::string resolved_dataset_name() const;
};

ExperimentConfig load_config_file(const std::string& path);
/// Canonical `key = value` dump; the basis of the provenance hash.
std::string canonical_config_text(const ExperimentConfig& cfg);
/// FNV-1a hash of the canonical text, hex-encoded.
std::string config_digest(const ExperimentConfig& cfg);

struct RawData {
    LabeledDataset train;
    LabeledDataset test;
    std::string name;
};

RawData load_raw_data(const ExperimentConfig& cfg);

/// Seeded row sampling + limit applied to one split.
LabeledDataset sample_rows(const LabeledDataset& ds, std::size_t limit, bool shuffle,
                           std::uint64_t seed);

struct TrainedModel {
    ModelParams params;
    TrainReport report;
    std::vector<std::string> ff_log;  // one line per (stage, epoch)
};

/// FF pre-training (when the variant wants it) + ADAM fine-tuning on the
/// label-embedded training matrix derived from train_ds with this seed.
/// Callbacks stream per-stage FF losses and per-epoch training telemetry.
TrainedModel train_variant(const ExperimentConfig& cfg, const LabeledDataset& train_ds,
                           Variant variant, std::size_t r, std::uint64_t seed,
                           const FFTelemetry& ff_telemetry = {},
                           const EpochCallback& on_epoch = {});

struct CellMetrics {
    double trust = 0.0;
    ClassificationReport knn;
    ClassificationReport gnb;
};

/// Embeds the evaluation population and the test split with a frozen model and
/// computes the full metric suite. Pure given (params, data, cfg, seed).
CellMetrics evaluate_model(const ExperimentConfig& cfg, const ModelParams& params,
                           const LabeledDataset& train_ds, const LabeledDataset& test_ds,
                           std::uint64_t seed);

struct MetricRow {
    std::string dataset;
    std::string variant;
    std::string r;       // numeric, or "mean" in the summary block
    std::string seed;    // numeric, or "all" in the summary block
    std::string metric;  // trustworthiness | {knn,gnb}_{accuracy,...} | error
    double value = 0.0;
};

std::vector<MetricRow> metric_rows(const std::string& dataset, Variant variant, std::size_t r,
                                   std::uint64_t seed, const CellMetrics& metrics);

inline constexpr const char* kMetricsCsvHeader = "dataset,variant,r,seed,metric,value";
inline constexpr const char* kLossCsvHeader = "epoch,loss,seconds";

/// Entry points behind the CLI subcommands; each returns a process exit code
/// (0 = every requested cell succeeded).
int cmd_train(const ExperimentConfig& cfg, Variant variant, std::size_t r);
int cmd_sweep(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);

}  // namespace meud
