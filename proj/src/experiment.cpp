#include "meud/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "meud/errors.hpp"

namespace meud {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: boolean expected for " + key + ", got '" + v + "'");
}

long long parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: integer expected for " + key + ", got '" + v + "'");
    }
}

double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: number expected for " + key + ", got '" + v + "'");
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
    for (std::size_t r = 25; r <= 500; r += 25) r_values.push_back(r);
}

std::string ExperimentConfig::resolved_dataset_name() const {
    if (!dataset_name.empty()) return dataset_name;
    if (format == "synth") return "synth-" + synth_kind;
    if (!dataset_dir.empty()) {
        const auto base = std::filesystem::path(dataset_dir).filename().string();
        if (!base.empty()) return base;
    }
    return format;
}

void ExperimentConfig::validate_for_run() const {
    if (variants.empty()) throw ConfigError("config: variant list is empty");
    if (seeds.empty()) throw ConfigError("config: seed list is empty");
    if (r_values.empty()) throw ConfigError("config: r list is empty");
    if (format != "idx" && format != "cifar10" && format != "synth") {
        throw ConfigError("config: unknown format '" + format + "'");
    }
    if (depth_s < 2) throw ConfigError("config: depth_s must be >= 2");
    if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
    train.validate();
    ff.validate();
}

namespace {

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "format") cfg.format = value;
    else if (key == "dataset_name") cfg.dataset_name = value;
    else if (key == "dataset_dir") cfg.dataset_dir = value;
    else if (key == "train_images") cfg.train_images = value;
    else if (key == "train_labels") cfg.train_labels = value;
    else if (key == "test_images") cfg.test_images = value;
    else if (key == "test_labels") cfg.test_labels = value;
    else if (key == "cifar_train_bins") cfg.cifar_train_bins = split_list(value);
    else if (key == "cifar_test_bin") cfg.cifar_test_bin = value;
    else if (key == "label_offset") cfg.label_offset = static_cast<int>(parse_int(value, key));
    else if (key == "train_limit") cfg.train_limit = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "test_limit") cfg.test_limit = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "shuffle_rows") cfg.shuffle_rows = parse_bool(value, key);
    else if (key == "dataset_seed") cfg.dataset_seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "synth_kind") cfg.synth_kind = value;
    else if (key == "synth_classes") cfg.synth_classes = static_cast<int>(parse_int(value, key));
    else if (key == "synth_per_class") cfg.synth_per_class = static_cast<int>(parse_int(value, key));
    else if (key == "synth_test_per_class") cfg.synth_test_per_class = static_cast<int>(parse_int(value, key));
    else if (key == "synth_features") cfg.synth_features = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "synth_spread") cfg.synth_spread = parse_real(value, key);
    else if (key == "synth_digits_count") cfg.synth_digits_count = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "synth_digits_test") cfg.synth_digits_test = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "variants") {
        cfg.variants.clear();
        for (const auto& name : split_list(value)) {
            const auto v = variant_from_name(name);
            if (!v) throw ConfigError("config: unknown variant '" + name + "'");
            cfg.variants.push_back(*v);
        }
    } else if (key == "r_values") {
        cfg.r_values.clear();
        for (const auto& item : split_list(value)) {
            cfg.r_values.push_back(static_cast<std::size_t>(parse_int(item, key)));
        }
    } else if (key == "depth_s") cfg.depth_s = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "encoder_widths") {
        cfg.encoder_override.clear();
        for (const auto& item : split_list(value)) {
            cfg.encoder_override.push_back(static_cast<std::size_t>(parse_int(item, key)));
        }
    }
    else if (key == "ff_matrices") cfg.ff_matrices = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "mirrored_negatives") cfg.mirrored_negatives = parse_bool(value, key);
    else if (key == "band_ring") cfg.band_ring = parse_bool(value, key);
    else if (key == "ff_theta") cfg.ff.theta = parse_real(value, key);
    else if (key == "ff_epochs") cfg.ff.epochs = static_cast<int>(parse_int(value, key));
    else if (key == "ff_learning_rate") cfg.ff.learning_rate = parse_real(value, key);
    else if (key == "ff_batch_size") cfg.ff.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "ff_normalize") cfg.ff.normalize_between_layers = parse_bool(value, key);
    else if (key == "ff_sgd") cfg.ff.use_sgd = parse_bool(value, key);
    else if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(value, key));
    else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "learning_rate") cfg.train.learning_rate = parse_real(value, key);
    else if (key == "shuffle") cfg.train.shuffle = parse_bool(value, key);
    else if (key == "trust_k") cfg.eval.trust_k = static_cast<int>(parse_int(value, key));
    else if (key == "knn_k") cfg.eval.knn_k = static_cast<int>(parse_int(value, key));
    else if (key == "trust_cap") cfg.eval.trust_cap = static_cast<std::size_t>(parse_int(value, key));
    else if (key == "eval_all_rows") cfg.eval.evaluate_all_rows = parse_bool(value, key);
    else if (key == "neutral_test_embedding") cfg.eval.neutral_test_embedding = parse_bool(value, key);
    else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& item : split_list(value)) {
            cfg.seeds.push_back(static_cast<std::uint64_t>(parse_int(item, key)));
        }
    } else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "jobs") cfg.jobs = static_cast<int>(parse_int(value, key));
    else throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    ExperimentConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
        }
        apply_key(cfg, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    }
    return cfg;
}

std::string canonical_config_text(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "format = " << cfg.format << "\n";
    out << "dataset_name = " << cfg.resolved_dataset_name() << "\n";
    out << "dataset_dir = " << cfg.dataset_dir << "\n";
    out << "train_images = " << cfg.train_images << "\n";
    out << "train_labels = " << cfg.train_labels << "\n";
    out << "test_images = " << cfg.test_images << "\n";
    out << "test_labels = " << cfg.test_labels << "\n";
    out << "cifar_train_bins = ";
    for (std::size_t i = 0; i < cfg.cifar_train_bins.size(); ++i) {
        out << (i ? "," : "") << cfg.cifar_train_bins[i];
    }
    out << "\n";
    out << "cifar_test_bin = " << cfg.cifar_test_bin << "\n";
    out << "label_offset = " << cfg.label_offset << "\n";
    out << "train_limit = " << cfg.train_limit << "\n";
    out << "test_limit = " << cfg.test_limit << "\n";
    out << "shuffle_rows = " << (cfg.shuffle_rows ? "true" : "false") << "\n";
    out << "dataset_seed = " << cfg.dataset_seed << "\n";
    out << "synth_kind = " << cfg.synth_kind << "\n";
    out << "synth_classes = " << cfg.synth_classes << "\n";
    out << "synth_per_class = " << cfg.synth_per_class << "\n";
    out << "synth_test_per_class = " << cfg.synth_test_per_class << "\n";
    out << "synth_features = " << cfg.synth_features << "\n";
    out << "synth_spread = " << fmt_double(cfg.synth_spread) << "\n";
    out << "synth_digits_count = " << cfg.synth_digits_count << "\n";
    out << "synth_digits_test = " << cfg.synth_digits_test << "\n";
    out << "variants = ";
    for (std::size_t i = 0; i < cfg.variants.size(); ++i) {
        out << (i ? "," : "") << variant_name(cfg.variants[i]);
    }
    out << "\n";
    out << "r_values = ";
    for (std::size_t i = 0; i < cfg.r_values.size(); ++i) out << (i ? "," : "") << cfg.r_values[i];
    out << "\n";
    out << "depth_s = " << cfg.depth_s << "\n";
    out << "encoder_widths = ";
    for (std::size_t i = 0; i < cfg.encoder_override.size(); ++i) {
        out << (i ? "," : "") << cfg.encoder_override[i];
    }
    out << "\n";
    out << "ff_matrices = " << cfg.ff_matrices << "\n";
    out << "mirrored_negatives = " << (cfg.mirrored_negatives ? "true" : "false") << "\n";
    out << "band_ring = " << (cfg.band_ring ? "true" : "false") << "\n";
    out << "ff_theta = " << fmt_double(cfg.ff.theta) << "\n";
    out << "ff_epochs = " << cfg.ff.epochs << "\n";
    out << "ff_learning_rate = " << fmt_double(cfg.ff.learning_rate) << "\n";
    out << "ff_batch_size = " << cfg.ff.batch_size << "\n";
    out << "ff_normalize = " << (cfg.ff.normalize_between_layers ? "true" : "false") << "\n";
    out << "ff_sgd = " << (cfg.ff.use_sgd ? "true" : "false") << "\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "batch_size = " << cfg.train.batch_size << "\n";
    out << "learning_rate = " << fmt_double(cfg.train.learning_rate) << "\n";
    out << "shuffle = " << (cfg.train.shuffle ? "true" : "false") << "\n";
    out << "trust_k = " << cfg.eval.trust_k << "\n";
    out << "knn_k = " << cfg.eval.knn_k << "\n";
    out << "trust_cap = " << cfg.eval.trust_cap << "\n";
    out << "eval_all_rows = " << (cfg.eval.evaluate_all_rows ? "true" : "false") << "\n";
    out << "neutral_test_embedding = " << (cfg.eval.neutral_test_embedding ? "true" : "false")
        << "\n";
    out << "seeds = ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? "," : "") << cfg.seeds[i];
    out << "\n";
    // out_dir and jobs are execution knobs, not experiment identity
    return out.str();
}

std::string config_digest(const ExperimentConfig& cfg) {
    const std::string text = canonical_config_text(cfg);
    std::uint64_t hash = 1469598103934665603ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

namespace {

LabeledDataset concat_datasets(const std::vector<LabeledDataset>& parts) {
    std::size_t rows = 0;
    for (const auto& p : parts) rows += p.size();
    if (parts.empty() || rows == 0) throw ConfigError("dataset: nothing to load");
    LabeledDataset out;
    out.num_classes = parts[0].num_classes;
    out.samples = Matrix(rows, parts[0].samples.cols());
    out.labels.reserve(rows);
    std::size_t at = 0;
    for (const auto& p : parts) {
        if (p.samples.cols() != out.samples.cols()) {
            throw DimensionError("dataset: mismatched feature widths across files");
        }
        for (std::size_t i = 0; i < p.size(); ++i, ++at) {
            std::copy(p.samples.row(i).begin(), p.samples.row(i).end(), out.samples.row(at).begin());
            out.labels.push_back(p.labels[i]);
        }
        out.num_classes = std::max(out.num_classes, p.num_classes);
    }
    return out;
}

std::string join_path(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

// Per-class split of the class-major blob layout.
void split_blobs(const LabeledDataset& all, int classes, int train_pc, int test_pc,
                 LabeledDataset& train, LabeledDataset& test) {
    const int total_pc = train_pc + test_pc;
    std::vector<std::size_t> train_idx, test_idx;
    for (int c = 0; c < classes; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * total_pc;
        for (int i = 0; i < train_pc; ++i) train_idx.push_back(base + i);
        for (int i = 0; i < test_pc; ++i) test_idx.push_back(base + train_pc + i);
    }
    auto gather = [&](const std::vector<std::size_t>& idx) {
        LabeledDataset out;
        out.num_classes = all.num_classes;
        out.samples = Matrix(idx.size(), all.samples.cols());
        out.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy(all.samples.row(idx[i]).begin(), all.samples.row(idx[i]).end(),
                      out.samples.row(i).begin());
            out.labels[i] = all.labels[idx[i]];
        }
        return out;
    };
    train = gather(train_idx);
    test = gather(test_idx);
}

}  // namespace

RawData load_raw_data(const ExperimentConfig& cfg) {
    RawData data;
    data.name = cfg.resolved_dataset_name();
    if (cfg.format == "idx") {
        std::string tri = cfg.train_images, trl = cfg.train_labels;
        std::string tei = cfg.test_images, tel = cfg.test_labels;
        if (tri.empty() && !cfg.dataset_dir.empty()) {
            tri = join_path(cfg.dataset_dir, "train-images-idx3-ubyte");
            trl = join_path(cfg.dataset_dir, "train-labels-idx1-ubyte");
            tei = join_path(cfg.dataset_dir, "t10k-images-idx3-ubyte");
            tel = join_path(cfg.dataset_dir, "t10k-labels-idx1-ubyte");
        }
        if (tri.empty()) throw ConfigError("dataset: idx format needs dataset_dir or file paths");
        data.train = parse_idx_files(tri, trl, cfg.label_offset);
        data.test = parse_idx_files(tei, tel, cfg.label_offset);
    } else if (cfg.format == "cifar10") {
        std::vector<std::string> bins = cfg.cifar_train_bins;
        std::string test_bin = cfg.cifar_test_bin;
        if (bins.empty() && !cfg.dataset_dir.empty()) {
            for (int i = 1; i <= 5; ++i) {
                bins.push_back(join_path(cfg.dataset_dir, "data_batch_" + std::to_string(i) + ".bin"));
            }
            test_bin = join_path(cfg.dataset_dir, "test_batch.bin");
        }
        if (bins.empty()) throw ConfigError("dataset: cifar10 format needs dataset_dir or file paths");
        std::vector<LabeledDataset> parts;
        for (const auto& bin : bins) parts.push_back(parse_cifar10_file(bin));
        data.train = concat_datasets(parts);
        data.test = parse_cifar10_file(test_bin);
    } else if (cfg.format == "synth") {
        if (cfg.synth_kind == "blobs") {
            const LabeledDataset all =
                synth_blobs(cfg.synth_classes, cfg.synth_per_class + cfg.synth_test_per_class,
                            cfg.synth_features, cfg.synth_spread, cfg.dataset_seed);
            split_blobs(all, cfg.synth_classes, cfg.synth_per_class, cfg.synth_test_per_class,
                        data.train, data.test);
        } else if (cfg.synth_kind == "digits") {
            const LabeledDataset all =
                synth_digits(cfg.synth_digits_count + cfg.synth_digits_test, cfg.dataset_seed);
            data.train = slice_dataset(all, 0, cfg.synth_digits_count);
            data.test = slice_dataset(all, cfg.synth_digits_count, cfg.synth_digits_test);
        } else {
            throw ConfigError("dataset: unknown synth_kind '" + cfg.synth_kind + "'");
        }
    } else {
        throw ConfigError("dataset: unknown format '" + cfg.format + "'");
    }
    data.train.num_classes = std::max(data.train.num_classes, data.test.num_classes);
    data.test.num_classes = data.train.num_classes;
    return data;
}

LabeledDataset sample_rows(const LabeledDataset& ds, std::size_t limit, bool shuffle,
                           std::uint64_t seed) {
    const std::size_t take = limit == 0 ? ds.size() : std::min(limit, ds.size());
    if (!shuffle) return slice_dataset(ds, 0, take);

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0xDA7A));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    LabeledDataset out;
    out.num_classes = ds.num_classes;
    out.samples = Matrix(take, ds.samples.cols());
    out.labels.resize(take);
    for (std::size_t i = 0; i < take; ++i) {
        std::copy(ds.samples.row(order[i]).begin(), ds.samples.row(order[i]).end(),
                  out.samples.row(i).begin());
        out.labels[i] = ds.labels[order[i]];
    }
    return out;
}

namespace {

NetworkConfig make_network(const ExperimentConfig& cfg, Variant variant, std::size_t n,
                           std::size_t r, std::uint64_t seed) {
    NetworkConfig net;
    if (cfg.encoder_override.empty()) {
        net = NetworkConfig::make(variant, n, r, cfg.depth_s, seed);
    } else {
        const auto& enc = cfg.encoder_override;
        if (enc.front() != n || enc.back() != r) {
            throw ConfigError("encoder_widths override runs " + std::to_string(enc.front()) +
                              ".." + std::to_string(enc.back()) + " but this cell needs n=" +
                              std::to_string(n) + ", r=" + std::to_string(r));
        }
        net.variant = variant;
        net.seed = seed;
        net.widths = enc;
        if (variant == Variant::BaselineAE) {
            for (std::size_t i = enc.size() - 1; i-- > 0;) net.widths.push_back(enc[i]);
        } else {
            net.widths.push_back(r);
            net.widths.push_back(n);
        }
        net.validate();
    }
    net.coop_ring = cfg.band_ring;
    return net;
}

}  // namespace

TrainedModel train_variant(const ExperimentConfig& cfg, const LabeledDataset& train_ds,
                           Variant variant, std::size_t r, std::uint64_t seed,
                           const FFTelemetry& ff_telemetry, const EpochCallback& on_epoch) {
    const std::size_t n = train_ds.samples.cols();
    const NetworkConfig net = make_network(cfg, variant, n, r, seed);

    const EncodedMatrix training =
        build_training_matrix(train_ds, mix_seed(seed, 7), cfg.mirrored_negatives);

    TrainedModel out;
    std::vector<Matrix> ff_weights;
    if (variant_uses_ff(variant)) {
        const std::size_t s = net.depth_s();
        std::size_t count = cfg.ff_matrices == 0 ? s - 1 : cfg.ff_matrices;
        count = std::min(count, s - 1);
        const std::vector<std::size_t> stack(net.widths.begin(),
                                             net.widths.begin() + count + 1);
        ff_weights = pretrain_stack(training, stack, cfg.ff, mix_seed(seed, 3),
                                    [&](std::size_t layer, int epoch, double loss) {
                                        out.ff_log.push_back(
                                            "ff-pretrain layer=" + std::to_string(layer) +
                                            " epoch=" + std::to_string(epoch + 1) +
                                            " loss=" + fmt_double(loss));
                                        if (ff_telemetry) ff_telemetry(layer, epoch, loss);
                                    });
    }

    out.params = init_params(net, ff_weights);
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(seed, 4);
    out.report = train(out.params, training, tc, on_epoch);
    return out;
}

namespace {

Matrix gather_matrix_rows(const Matrix& src, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(src.row(idx[i]).begin(), src.row(idx[i]).end(), out.row(i).begin());
    }
    return out;
}

}  // namespace

CellMetrics evaluate_model(const ExperimentConfig& cfg, const ModelParams& params,
                           const LabeledDataset& train_ds, const LabeledDataset& test_ds,
                           std::uint64_t seed) {
    const int p = train_ds.num_classes;
    const EncodedMatrix training =
        build_training_matrix(train_ds, mix_seed(seed, 7), cfg.mirrored_negatives);

    // Evaluation population: the positive half unless widened by config.
    std::vector<std::size_t> population;
    std::vector<int> population_labels;
    for (std::size_t i = 0; i < training.size(); ++i) {
        if (!cfg.eval.evaluate_all_rows && training.polarity[i] != Polarity::Positive) continue;
        population.push_back(i);
        population_labels.push_back(training.source_labels[i]);
    }
    const Matrix population_inputs = gather_matrix_rows(training.data, population);
    const Matrix population_emb = extract_embedding(params, population_inputs);

    CellMetrics metrics;
    {
        // Seeded subsample when the population exceeds the trustworthiness cap.
        const std::size_t m = population_inputs.rows();
        if (cfg.eval.trust_cap != 0 && m > cfg.eval.trust_cap) {
            std::vector<std::size_t> order(m);
            std::iota(order.begin(), order.end(), 0);
            std::mt19937_64 rng(mix_seed(seed, 99));
            for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
            order.resize(cfg.eval.trust_cap);
            std::sort(order.begin(), order.end());
            metrics.trust = trustworthiness(gather_matrix_rows(population_inputs, order),
                                            gather_matrix_rows(population_emb, order),
                                            cfg.eval.trust_k);
        } else {
            metrics.trust = trustworthiness(population_inputs, population_emb, cfg.eval.trust_k);
        }
    }

    // Test split: positive label embedding by default, zeroed label block when
    // the neutral mode is requested.
    Matrix test_inputs;
    if (cfg.eval.neutral_test_embedding) {
        test_inputs = test_ds.samples;
        for (std::size_t i = 0; i < test_inputs.rows(); ++i) {
            for (int j = 0; j < p; ++j) test_inputs(i, static_cast<std::size_t>(j)) = 0.0;
        }
    } else {
        test_inputs = embed_labels(test_ds, Polarity::Positive, 0).data;
    }
    const Matrix test_emb = extract_embedding(params, test_inputs);

    const ClassifierOutput knn =
        knn_classify(population_emb, population_labels, test_emb, cfg.eval.knn_k, p);
    metrics.knn = classification_metrics(test_ds.labels, knn.predicted, knn.scores);
    const ClassifierOutput gnb = gnb_fit_predict(population_emb, population_labels, test_emb, p);
    metrics.gnb = classification_metrics(test_ds.labels, gnb.predicted, gnb.scores);
    return metrics;
}

namespace {

const char* kClassifierMetricNames[6] = {"accuracy", "precision", "recall",
                                         "f1",       "jaccard",   "roc_auc"};

std::vector<std::pair<std::string, double>> flat_metrics(const CellMetrics& m) {
    std::vector<std::pair<std::string, double>> out;
    out.emplace_back("trustworthiness", m.trust);
    const ClassificationReport* reports[2] = {&m.knn, &m.gnb};
    const char* prefixes[2] = {"knn_", "gnb_"};
    for (int c = 0; c < 2; ++c) {
        const auto& r = *reports[c];
        const double values[6] = {r.accuracy, r.precision, r.recall, r.f1, r.jaccard, r.roc_auc};
        for (int i = 0; i < 6; ++i) {
            out.emplace_back(std::string(prefixes[c]) + kClassifierMetricNames[i], values[i]);
        }
    }
    return out;
}

}  // namespace

std::vector<MetricRow> metric_rows(const std::string& dataset, Variant variant, std::size_t r,
                                   std::uint64_t seed, const CellMetrics& metrics) {
    std::vector<MetricRow> rows;
    for (const auto& [name, value] : flat_metrics(metrics)) {
        rows.push_back({dataset, variant_name(variant), std::to_string(r), std::to_string(seed),
                        name, value});
    }
    return rows;
}

namespace {

void write_provenance(std::ostream& out, const ExperimentConfig& cfg, const char* kind) {
    out << "# meud " << kind << " format 1\n";
    out << "# config " << config_digest(cfg) << "\n";
    out << "# seeds ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? "," : "") << cfg.seeds[i];
    out << "\n";
    if (std::string(kind) == "metrics") {
        out << "# eval trust_k=" << cfg.eval.trust_k << " knn_k=" << cfg.eval.knn_k
            << " trust_cap=" << cfg.eval.trust_cap << " trust_subsample_seed=mix(seed,99)"
            << (cfg.eval.evaluate_all_rows ? " population=all" : " population=positive-half")
            << (cfg.eval.neutral_test_embedding ? " test-embedding=neutral"
                                                : " test-embedding=positive")
            << "\n";
    }
}

std::string cell_stem(const ExperimentConfig& cfg, Variant variant, std::size_t r,
                      std::uint64_t seed) {
    return cfg.resolved_dataset_name() + "_" + variant_name(variant) + "_r" + std::to_string(r) +
           "_seed" + std::to_string(seed);
}

struct CellJob {
    Variant variant;
    std::size_t r;
    std::uint64_t seed;
};

struct CellOutcome {
    std::vector<MetricRow> rows;
    bool failed = false;
    std::string error;
};

}  // namespace

int cmd_train(const ExperimentConfig& cfg, Variant variant, std::size_t r) {
    cfg.validate_for_run();
    std::filesystem::create_directories(cfg.out_dir);
    const std::uint64_t seed = cfg.seeds.front();

    const RawData raw = load_raw_data(cfg);
    const LabeledDataset train_ds =
        sample_rows(raw.train, cfg.train_limit, cfg.shuffle_rows, seed);

    const std::string stem = join_path(cfg.out_dir, cell_stem(cfg, variant, r, seed));
    const std::string loss_path = stem + "_loss.csv";
    std::ofstream loss_csv(loss_path, std::ios::trunc);
    if (!loss_csv) throw IoError("cannot open " + loss_path);
    write_provenance(loss_csv, cfg, "loss");
    loss_csv << "# dataset " << raw.name << " variant " << variant_name(variant) << " r " << r
             << " seed " << seed << "\n";

    // telemetry is streamed row by row as the stages finish
    bool header_written = false;
    const TrainedModel model = train_variant(
        cfg, train_ds, variant, r, seed,
        [&](std::size_t layer, int epoch, double loss) {
            loss_csv << "# ff-pretrain layer=" << layer << " epoch=" << (epoch + 1)
                     << " loss=" << fmt_double(loss) << "\n";
            loss_csv.flush();
        },
        [&](int epoch, double loss, double seconds) {
            if (!header_written) {
                loss_csv << kLossCsvHeader << "\n";
                header_written = true;
            }
            loss_csv << (epoch + 1) << "," << fmt_double(loss) << "," << fmt_double(seconds)
                     << "\n";
            loss_csv.flush();
        });
    if (!loss_csv) throw IoError("write failed for " + loss_path);

    save_checkpoint(model.params, stem + ".ckpt");
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
    cfg.validate_for_run();
    std::filesystem::create_directories(cfg.out_dir);

    const RawData raw = load_raw_data(cfg);

    std::vector<CellJob> jobs;
    for (Variant v : cfg.variants) {
        for (std::size_t r : cfg.r_values) {
            for (std::uint64_t seed : cfg.seeds) jobs.push_back({v, r, seed});
        }
    }

    std::vector<CellOutcome> outcomes(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const CellJob& job = jobs[i];
            try {
                const LabeledDataset train_ds =
                    sample_rows(raw.train, cfg.train_limit, cfg.shuffle_rows, job.seed);
                const LabeledDataset test_ds =
                    sample_rows(raw.test, cfg.test_limit, cfg.shuffle_rows, mix_seed(job.seed, 2));
                const TrainedModel model =
                    train_variant(cfg, train_ds, job.variant, job.r, job.seed);
                const CellMetrics metrics =
                    evaluate_model(cfg, model.params, train_ds, test_ds, job.seed);
                outcomes[i].rows = metric_rows(raw.name, job.variant, job.r, job.seed, metrics);
            } catch (const std::exception& e) {
                outcomes[i].failed = true;
                outcomes[i].error = e.what();
            }
        }
    };
    const unsigned workers = std::min<std::size_t>(cfg.jobs, jobs.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    const std::string csv_path = join_path(cfg.out_dir, "metrics.csv");
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + csv_path);
    write_provenance(csv, cfg, "metrics");
    csv << kMetricsCsvHeader << "\n";

    bool any_failed = false;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const CellJob& job = jobs[i];
        if (outcomes[i].failed) {
            any_failed = true;
            csv << "# error variant=" << variant_name(job.variant) << " r=" << job.r
                << " seed=" << job.seed << " what=" << outcomes[i].error << "\n";
            csv << raw.name << "," << variant_name(job.variant) << "," << job.r << "," << job.seed
                << ",error,1\n";
            continue;
        }
        for (const auto& row : outcomes[i].rows) {
            csv << row.dataset << "," << row.variant << "," << row.r << "," << row.seed << ","
                << row.metric << "," << fmt_double(row.value) << "\n";
        }
    }

    // Mean over every successful (r, seed) cell, per variant and metric.
    csv << "# summary: mean over r (and seeds)\n";
    for (Variant v : cfg.variants) {
        std::map<std::string, std::pair<double, std::size_t>> sums;
        std::vector<std::string> metric_order;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].variant != v || outcomes[i].failed) continue;
            for (const auto& row : outcomes[i].rows) {
                auto [it, inserted] = sums.try_emplace(row.metric, 0.0, 0);
                if (inserted) metric_order.push_back(row.metric);
                it->second.first += row.value;
                it->second.second += 1;
            }
        }
        for (const auto& name : metric_order) {
            const auto& [sum, count] = sums[name];
            csv << raw.name << "," << variant_name(v) << ",mean,all," << name << ","
                << fmt_double(sum / static_cast<double>(count)) << "\n";
        }
    }
    csv.flush();
    if (!csv) throw IoError("write failed for " + csv_path);
    return any_failed ? 1 : 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate_for_run();
    std::filesystem::create_directories(cfg.out_dir);

    const ModelParams params = load_checkpoint(checkpoint_path);
    const Variant variant = params.config.variant;
    const std::size_t r = params.config.widths[params.config.latent_index()];
    const std::uint64_t seed = params.config.seed;

    const RawData raw = load_raw_data(cfg);
    const LabeledDataset train_ds = sample_rows(raw.train, cfg.train_limit, cfg.shuffle_rows, seed);
    const LabeledDataset test_ds =
        sample_rows(raw.test, cfg.test_limit, cfg.shuffle_rows, mix_seed(seed, 2));
    if (train_ds.samples.cols() != params.config.widths[0]) {
        throw DimensionError("eval: dataset width " + std::to_string(train_ds.samples.cols()) +
                             " vs checkpoint input width " +
                             std::to_string(params.config.widths[0]));
    }

    const CellMetrics metrics = evaluate_model(cfg, params, train_ds, test_ds, seed);
    const auto rows = metric_rows(raw.name, variant, r, seed, metrics);

    const std::string base = std::filesystem::path(checkpoint_path).stem().string();
    const std::string csv_path = join_path(cfg.out_dir, base + ".eval.csv");
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + csv_path);
    write_provenance(csv, cfg, "metrics");
    csv << kMetricsCsvHeader << "\n";
    for (const auto& row : rows) {
        csv << row.dataset << "," << row.variant << "," << row.r << "," << row.seed << ","
            << row.metric << "," << fmt_double(row.value) << "\n";
    }
    csv.flush();
    if (!csv) throw IoError("write failed for " + csv_path);
    return 0;
}

}  // namespace meud
