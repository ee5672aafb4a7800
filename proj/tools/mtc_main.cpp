// mtc — session-based traffic classification toolkit.
//
// Subcommands: synth-data, ingest, search, train, eval, quantize, report,
// gradcheck. Every artifact-producing subcommand writes a run manifest next
// to its outputs. Exit codes:
//   0  success
//   1  domain error not covered below
//   2  label resolution failure during ingest
//   3  infeasible initial architecture (budget)
//   4  empty or unusable dataset
//   5  malformed or corrupt input file (magic / checksum / version / format)
//   6  corrupt or mismatched search checkpoint
//   7  filesystem I/O failure
//   8  invalid configuration or specification
//   9  unexpected internal error
// CLI11 usage errors report through its own nonzero exit paths.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mtc/arch.hpp"
#include "mtc/model_io.hpp"
#include "mtc/nas.hpp"
#include "mtc/nn.hpp"
#include "mtc/quant.hpp"
#include "mtc/session.hpp"
#include "mtc/synth.hpp"
#include "mtc/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// ---- logging (MTC_LOG=quiet|info|debug) ------------------------------------

int log_level() {
    static int level = [] {
        const char* env = std::getenv("MTC_LOG");
        if (!env) return 1;
        std::string v = env;
        if (v == "quiet") return 0;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[mtc] " << msg << "\n";
}
void debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[mtc:debug] " << msg << "\n";
}

// ---- run manifest -----------------------------------------------------------

std::string iso_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const nlohmann::ordered_json& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["wall_clock"] = iso_now();
    mtc::write_file((out_dir / (command + "_manifest.json")).string(), m.dump(2) + "\n");
}

// ---- config file: flat key=value with optional [section] headers ------------

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    auto bytes = mtc::read_file(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::map<std::string, std::string> kv;
    std::string line, section;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        std::size_t start = line.find_first_not_of(' ');
        if (start == std::string::npos) continue;
        line = line.substr(start);
        if (line.front() == '[') {
            auto close = line.find(']');
            if (close == std::string::npos)
                throw mtc::InvalidSpec("config: unterminated section in " + path);
            section = line.substr(1, close - 1);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw mtc::InvalidSpec("config: expected key=value, got: " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (!section.empty()) key = section + "." + key;
        kv[key] = val;
    }
    return kv;
}

void apply_search_config(const std::map<std::string, std::string>& kv, mtc::SearchConfig& cfg) {
    auto geti = [&](const char* k, int& out) {
        if (auto it = kv.find(k); it != kv.end()) out = std::stoi(it->second);
    };
    auto getz = [&](const char* k, std::size_t& out) {
        if (auto it = kv.find(k); it != kv.end()) out = std::stoull(it->second);
    };
    auto getd = [&](const char* k, double& out) {
        if (auto it = kv.find(k); it != kv.end()) out = std::stod(it->second);
    };
    geti("generations", cfg.generations);
    geti("children", cfg.children_per_generation);
    geti("runs", cfg.runs);
    getd("holdout", cfg.holdout_fraction);
    geti("workers", cfg.workers);
    geti("max_mutation_attempts", cfg.max_mutation_attempts);
    if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
    if (auto it = kv.find("elitist"); it != kv.end()) cfg.elitist = it->second != "0";
    if (auto it = kv.find("aggregation"); it != kv.end()) {
        if (it->second == "best") cfg.aggregation = mtc::FitnessAggregation::best;
        else if (it->second == "mean") cfg.aggregation = mtc::FitnessAggregation::mean;
        else throw mtc::InvalidSpec("config: aggregation must be best or mean");
    }
    getz("budget.params", cfg.budget.param_limit);
    getz("budget.tensor", cfg.budget.tensor_limit);
    getz("budget.flops", cfg.budget.flop_limit);
    getd("train.lr0", cfg.train.lr0);
    geti("train.batch", cfg.train.batch);
    geti("train.epochs", cfg.train.max_epochs);
    geti("train.plateau_patience", cfg.train.plateau_patience);
    getd("train.plateau_factor", cfg.train.plateau_factor);
    getd("train.min_lr", cfg.train.min_lr);
    geti("train.early_stop_patience", cfg.train.early_stop_patience);
}

nlohmann::ordered_json search_config_json(const mtc::SearchConfig& cfg) {
    nlohmann::ordered_json j;
    j["generations"] = cfg.generations;
    j["children"] = cfg.children_per_generation;
    j["runs"] = cfg.runs;
    j["holdout"] = cfg.holdout_fraction;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["elitist"] = cfg.elitist;
    j["aggregation"] = cfg.aggregation == mtc::FitnessAggregation::best ? "best" : "mean";
    j["budget"] = {{"params", cfg.budget.param_limit},
                   {"tensor", cfg.budget.tensor_limit},
                   {"flops", cfg.budget.flop_limit}};
    j["train"] = {{"lr0", cfg.train.lr0},
                  {"batch", cfg.train.batch},
                  {"epochs", cfg.train.max_epochs},
                  {"plateau_patience", cfg.train.plateau_patience},
                  {"plateau_factor", cfg.train.plateau_factor},
                  {"min_lr", cfg.train.min_lr},
                  {"early_stop_patience", cfg.train.early_stop_patience}};
    return j;
}

// ---- shared helpers ---------------------------------------------------------

std::vector<mtc::SessionRecord> load_records(const std::string& path) {
    return mtc::deserialize_records(mtc::read_file(path));
}

int n_classes_of(const std::vector<mtc::SessionRecord>& records) {
    if (records.empty()) throw mtc::EmptyDataset("record file holds no records");
    int n = 0;
    for (const auto& r : records) n = std::max(n, static_cast<int>(r.label) + 1);
    return n;
}

std::string read_text(const std::string& path) {
    auto bytes = mtc::read_file(path);
    return {bytes.begin(), bytes.end()};
}

std::string confusion_csv(const mtc::Metrics& m) {
    std::ostringstream out;
    out << "truth";
    for (std::size_t c = 0; c < m.confusion.size(); ++c) out << ",pred_" << c;
    out << "\n";
    for (std::size_t t = 0; t < m.confusion.size(); ++t) {
        out << t;
        for (std::size_t p = 0; p < m.confusion[t].size(); ++p) out << ',' << m.confusion[t][p];
        out << "\n";
    }
    return out.str();
}

std::string metrics_csv(const mtc::Metrics& m) {
    std::ostringstream out;
    out << "accuracy,macro_f1\n" << m.accuracy << ',' << m.macro_f1 << "\n";
    return out.str();
}

// Rebuilds a genome from a float model's layer table (the inverse of
// genome_layers); needed so `report` can cost a model file.
mtc::ArchGenome genome_from_model(const mtc::Model<float>& model) {
    mtc::ArchGenome g;
    std::size_t i = 0;
    while (i < model.layers.size() &&
           std::holds_alternative<mtc::Conv1DSpec>(model.layers[i])) {
        const auto& conv = std::get<mtc::Conv1DSpec>(model.layers[i]);
        mtc::BlockGene b;
        b.filters = conv.out_ch;
        b.kernel = conv.kernel;
        b.stride = conv.stride;
        b.padding = conv.padding;
        ++i;
        if (i < model.layers.size() && std::holds_alternative<mtc::BatchNormSpec>(model.layers[i]))
            ++i;
        if (i < model.layers.size() && std::holds_alternative<mtc::ReLUSpec>(model.layers[i]))
            ++i;
        if (i < model.layers.size()) {
            if (const auto* mp = std::get_if<mtc::MaxPool1DSpec>(&model.layers[i])) {
                b.pool = mtc::PoolKind::max;
                b.pool_size = mp->size;
                ++i;
            } else if (const auto* ap = std::get_if<mtc::AvgPool1DSpec>(&model.layers[i])) {
                b.pool = mtc::PoolKind::avg;
                b.pool_size = ap->size;
                ++i;
            }
        }
        if (i < model.layers.size() &&
            std::holds_alternative<mtc::DropoutSpec>(model.layers[i])) {
            b.dropout = std::get<mtc::DropoutSpec>(model.layers[i]).rate;
            ++i;
        }
        g.blocks.push_back(b);
    }
    for (; i < model.layers.size(); ++i)
        if (const auto* d = std::get_if<mtc::DenseSpec>(&model.layers[i])) g.n_classes = d->out;
    if (g.blocks.empty())
        throw mtc::UnsupportedTopology("model does not follow the conv-block layout");
    return g;
}

// ---- subcommand bodies ------------------------------------------------------

struct CommonArgs {
    std::uint64_t seed = 0;
    std::string config_path;
    std::string out_dir = ".";
    int workers = 1;
    bool resume = false;
};

int cmd_synth_data(const CommonArgs& common, int classes, int sessions, bool big_endian) {
    mtc::CorpusSpec spec;
    spec.n_classes = classes;
    spec.sessions_per_class = sessions;
    spec.big_endian_pcap = big_endian;
    auto corpus = mtc::generate_synthetic_corpus(spec, common.seed);

    fs::create_directories(common.out_dir);
    fs::path dir(common.out_dir);
    std::vector<std::string> outputs;
    for (std::size_t c = 0; c < corpus.captures.size(); ++c) {
        auto path = dir / (corpus.label_names[c] + ".pcap");
        mtc::write_file(path.string(), corpus.captures[c]);
        outputs.push_back(path.string());
    }
    auto labels_path = dir / "labels.tsv";
    mtc::write_file(labels_path.string(), mtc::serialize_label_map(corpus.label_names));
    outputs.push_back(labels_path.string());

    nlohmann::ordered_json cfg;
    cfg["classes"] = classes;
    cfg["sessions_per_class"] = sessions;
    cfg["big_endian"] = big_endian;
    cfg["seed"] = common.seed;
    write_manifest(dir, "synth-data", cfg, {}, outputs);
    std::cout << "wrote " << corpus.captures.size() << " captures ("
              << classes * sessions << " sessions) and labels.tsv to " << dir.string() << "\n";
    return 0;
}

int cmd_ingest(const CommonArgs& common, const std::vector<std::string>& pcaps,
               const std::string& labels_path, std::string out_path) {
    auto names = mtc::parse_label_map(read_text(labels_path));
    fs::create_directories(common.out_dir);
    if (out_path.empty()) out_path = (fs::path(common.out_dir) / "records.bin").string();

    std::vector<mtc::SessionRecord> records;
    mtc::IngestDiagnostics diag;
    for (const auto& pcap_path : pcaps) {
        std::string stem = fs::path(pcap_path).stem().string();
        auto it = std::find(names.begin(), names.end(), stem);
        if (it == names.end()) {
            std::cerr << "error: no label for capture file " << pcap_path
                      << " (stem '" << stem << "' not in " << labels_path << ")\n";
            return 2;
        }
        auto label = static_cast<std::uint16_t>(it - names.begin());
        auto bytes = mtc::read_file(pcap_path);
        mtc::IngestDiagnostics d;
        auto recs = mtc::ingest_capture(bytes, label, &d);
        if (recs.empty()) info("warning: " + pcap_path + " produced no records");
        diag.merge(d);
        records.insert(records.end(), recs.begin(), recs.end());
        debug(pcap_path + ": " + std::to_string(recs.size()) + " records");
    }
    mtc::write_file(out_path, mtc::serialize_records(records));

    nlohmann::ordered_json cfg;
    cfg["labels"] = labels_path;
    write_manifest(fs::path(out_path).parent_path(), "ingest", cfg, pcaps, {out_path});
    std::cout << "records: " << records.size() << "\n"
              << "frames total/skipped: " << diag.frames_total << "/" << diag.frames_skipped
              << "\n"
              << "sessions assembled/empty-after-cleaning: " << diag.sessions_assembled << "/"
              << diag.sessions_empty_after_cleaning << "\n"
              << "packets filtered (handshake/dns-dedup): " << diag.packets_filtered_handshake
              << "/" << diag.packets_filtered_dns << "\n";
    return 0;
}

int cmd_search(const CommonArgs& common, const std::string& records_path,
               const std::string& initial_genome_path, int stop_after,
               const std::vector<std::string>& overrides) {
    mtc::SearchConfig cfg;
    cfg.seed = common.seed;
    cfg.workers = common.workers;
    std::map<std::string, std::string> kv;
    if (!common.config_path.empty()) kv = parse_config_file(common.config_path);
    for (const auto& o : overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos)
            throw mtc::InvalidSpec("--set expects key=value, got: " + o);
        kv[o.substr(0, eq)] = o.substr(eq + 1);
    }
    apply_search_config(kv, cfg);

    auto records = load_records(records_path);
    int classes = n_classes_of(records);
    if (classes < 2) throw mtc::InvalidSpec("search needs at least 2 classes in the records");

    mtc::ArchGenome parent = initial_genome_path.empty()
                                 ? mtc::default_initial_parent(classes)
                                 : mtc::parse_genome(read_text(initial_genome_path));
    parent.n_classes = classes;

    fs::create_directories(common.out_dir);
    fs::path dir(common.out_dir);
    std::string ckpt = (dir / "checkpoint.bin").string();

    std::optional<mtc::SearchState> resume_state;
    if (common.resume) {
        resume_state = mtc::deserialize_checkpoint(mtc::read_file(ckpt), cfg);
        info("resuming from generation " + std::to_string(resume_state->next_generation));
    }

    auto result = mtc::run_search(cfg, records, parent, ckpt,
                                  resume_state ? &*resume_state : nullptr, stop_after);

    auto best_path = (dir / "best_genome.txt").string();
    auto log_path = (dir / "search_log.ndjson").string();
    auto gens_path = (dir / "generations.csv").string();
    mtc::write_file(best_path, mtc::format_genome(result.best));
    mtc::write_file(log_path, result.log.to_ndjson());
    std::ostringstream gens;
    gens << "generation,rejected_mutations,starved,best_fitness\n";
    for (const auto& g : result.log.generations)
        gens << g.generation << ',' << g.rejected_mutations << ',' << (g.starved ? 1 : 0) << ','
             << g.best_fitness << "\n";
    mtc::write_file(gens_path, gens.str());

    write_manifest(dir, "search", search_config_json(cfg), {records_path},
                   {best_path, log_path, gens_path, ckpt});
    std::cout << "best fitness: " << result.best_fitness << "\n"
              << mtc::format_genome(result.best);
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& records_path,
              const std::string& genome_path, int epochs, int batch, double holdout) {
    auto records = load_records(records_path);
    auto genome = mtc::parse_genome(read_text(genome_path));
    genome.n_classes = n_classes_of(records);

    auto [train_set, val_set] = mtc::holdout_split(records, holdout, common.seed);
    auto model = mtc::instantiate<float>(genome, common.seed);
    mtc::TrainConfig tc;
    tc.max_epochs = epochs;
    tc.batch = batch;
    tc.seed = common.seed;
    auto history = mtc::train(model, train_set, val_set, tc);
    auto metrics = mtc::evaluate(model, val_set);

    fs::create_directories(common.out_dir);
    fs::path dir(common.out_dir);
    auto model_path = (dir / "model.bin").string();
    auto history_path = (dir / "history.csv").string();
    std::size_t bytes = mtc::save_model(model, model_path);
    mtc::write_file(history_path, history.to_csv());

    nlohmann::ordered_json cfg;
    cfg["genome"] = mtc::format_genome(genome);
    cfg["epochs"] = epochs;
    cfg["batch"] = batch;
    cfg["holdout"] = holdout;
    cfg["seed"] = common.seed;
    write_manifest(dir, "train", cfg, {records_path, genome_path}, {model_path, history_path});
    std::cout << "trained " << history.epochs.size() << " epochs (best " << history.best_epoch
              << "); val accuracy " << metrics.accuracy << ", macro F1 " << metrics.macro_f1
              << "\nmodel: " << model_path << " (" << bytes << " bytes)\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& records_path,
             const std::string& model_path) {
    auto records = load_records(records_path);
    auto loaded = mtc::load_model(model_path);

    mtc::Metrics metrics;
    if (auto* fm = std::get_if<mtc::Model<float>>(&loaded)) {
        metrics = mtc::evaluate(*fm, records);
    } else {
        auto& qm = std::get<mtc::QuantModel>(loaded);
        std::vector<int> truth;
        truth.reserve(records.size());
        for (const auto& r : records) truth.push_back(r.label);
        metrics = mtc::metrics_from_predictions(truth, mtc::quant_predict(qm, records),
                                                qm.n_classes);
    }

    fs::create_directories(common.out_dir);
    fs::path dir(common.out_dir);
    auto metrics_path = (dir / "metrics.csv").string();
    auto confusion_path = (dir / "confusion.csv").string();
    mtc::write_file(metrics_path, metrics_csv(metrics));
    mtc::write_file(confusion_path, confusion_csv(metrics));

    nlohmann::ordered_json cfg;
    cfg["model"] = model_path;
    write_manifest(dir, "eval", cfg, {records_path, model_path},
                   {metrics_path, confusion_path});
    std::cout << "accuracy " << metrics.accuracy << ", macro F1 " << metrics.macro_f1 << "\n";
    return 0;
}

int cmd_quantize(const CommonArgs& common, const std::string& records_path,
                 const std::string& model_path) {
    auto records = load_records(records_path);
    auto loaded = mtc::load_model(model_path);
    auto* fm = std::get_if<mtc::Model<float>>(&loaded);
    if (!fm) throw mtc::UnsupportedTopology("quantize expects a float model file");

    auto folded = mtc::fold_batchnorm(*fm);
    auto qm = mtc::quantize_model(folded, mtc::calibrate(folded, records));
    auto report = mtc::compare(*fm, qm, records);

    fs::create_directories(common.out_dir);
    fs::path dir(common.out_dir);
    auto qmodel_path = (dir / "model_int8.bin").string();
    auto delta_path = (dir / "delta.csv").string();
    std::size_t bytes = mtc::save_model(qm, qmodel_path);
    mtc::write_file(delta_path, report.to_csv());

    nlohmann::ordered_json cfg;
    cfg["model"] = model_path;
    write_manifest(dir, "quantize", cfg, {records_path, model_path},
                   {qmodel_path, delta_path});
    std::cout << "int8 model: " << qmodel_path << " (" << bytes << " bytes)\n"
              << "float accuracy " << report.float_metrics.accuracy << ", int8 accuracy "
              << report.int8_metrics.accuracy << ", argmax agreement "
              << report.argmax_agreement << "\n";
    return 0;
}

int cmd_report(const CommonArgs& common, const std::string& genome_path,
               const std::string& model_path, bool paper_arch, const std::string& format,
               const std::string& out_path) {
    mtc::ArchGenome genome;
    std::string source;
    if (paper_arch) {
        genome = mtc::paper_architecture();
        source = "paper-arch";
    } else if (!genome_path.empty()) {
        genome = mtc::parse_genome(read_text(genome_path));
        source = genome_path;
    } else if (!model_path.empty()) {
        auto loaded = mtc::load_model(model_path);
        auto* fm = std::get_if<mtc::Model<float>>(&loaded);
        if (!fm) throw mtc::UnsupportedTopology("report from model file requires f32 precision");
        genome = genome_from_model(*fm);
        source = model_path;
    } else {
        throw mtc::InvalidSpec("report needs --genome, --model, or --paper-arch");
    }
    auto fmt = format == "csv" ? mtc::ReportFormat::csv : mtc::ReportFormat::text;
    auto rendered = mtc::emit_cost_report(genome, fmt);
    std::cout << rendered;
    if (!out_path.empty()) {
        mtc::write_file(out_path, rendered);
        nlohmann::ordered_json cfg;
        cfg["source"] = source;
        cfg["format"] = format;
        write_manifest(fs::path(out_path).parent_path(), "report", cfg, {source}, {out_path});
    }
    return 0;
}

int cmd_gradcheck(const CommonArgs& common, int trials) {
    std::mt19937 rng(static_cast<std::uint32_t>(common.seed) + 5);
    double worst_overall = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        mtc::ArchGenome g;
        g.n_classes = 2 + static_cast<int>(rng() % 4);
        int depth = 1 + static_cast<int>(rng() % 2);
        for (int b = 0; b < depth; ++b) {
            mtc::BlockGene gene;
            gene.filters = 2 + static_cast<int>(rng() % 4);
            gene.kernel = 3 + static_cast<int>(rng() % 3);
            gene.stride = 1 + static_cast<int>(rng() % 2);
            gene.padding = rng() % 2 ? mtc::Padding::same : mtc::Padding::valid;
            gene.pool = static_cast<mtc::PoolKind>(rng() % 3);
            gene.dropout = 0.1 + 0.1 * (rng() % 3);
            g.blocks.push_back(gene);
        }
        const int input_len = 32;
        auto model = mtc::instantiate<double>(g, 50 + trial, input_len);
        // central finite differences against backward()
        std::mt19937 data_rng(100 + trial);
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        mtc::Tensor<double> batch({3, 1, input_len});
        for (auto& v : batch.v) v = dist(data_rng);
        std::vector<int> labels(3);
        for (auto& l : labels) l = static_cast<int>(data_rng() % g.n_classes);

        auto loss_at = [&] {
            model.reseed(model.rng_seed);
            return mtc::cross_entropy(model.forward(batch, mtc::RunMode::train), labels);
        };
        mtc::ForwardCache<double> cache;
        model.reseed(model.rng_seed);
        model.forward(batch, mtc::RunMode::train, &cache);
        auto analytic = model.backward(cache, labels);
        double worst = 0.0;
        const double step = 1e-4;
        for (std::size_t i = 0; i < model.params.size(); ++i)
            for (std::size_t j = 0; j < model.params[i].size(); ++j)
                for (std::size_t k = 0; k < model.params[i][j].v.size(); ++k) {
                    double saved = model.params[i][j].v[k];
                    model.params[i][j].v[k] = saved + step;
                    double up = loss_at();
                    model.params[i][j].v[k] = saved - step;
                    double down = loss_at();
                    model.params[i][j].v[k] = saved;
                    double fd = (up - down) / (2 * step);
                    double an = analytic[i][j].v[k];
                    double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
                    worst = std::max(worst, std::abs(fd - an) / denom);
                }
        std::cout << "trial " << trial << ": max relative error " << worst << "\n";
        worst_overall = std::max(worst_overall, worst);
    }
    bool ok = worst_overall < 1e-3;
    std::cout << (ok ? "PASS" : "FAIL") << " (worst " << worst_overall << ", threshold 1e-3)\n";
    return ok ? 0 : 1;
}

int map_error_to_exit(const std::exception& e) {
    using namespace mtc;
    if (dynamic_cast<const InfeasibleStart*>(&e)) return 3;
    if (dynamic_cast<const EmptyDataset*>(&e) || dynamic_cast<const EmptyCalibrationSet*>(&e) ||
        dynamic_cast<const ClassTooSmall*>(&e))
        return 4;
    if (dynamic_cast<const CorruptCheckpoint*>(&e)) return 6;
    if (dynamic_cast<const BadMagic*>(&e) || dynamic_cast<const ChecksumMismatch*>(&e) ||
        dynamic_cast<const VersionUnsupported*>(&e) || dynamic_cast<const MalformedHeader*>(&e) ||
        dynamic_cast<const TruncatedRecord*>(&e) || dynamic_cast<const UnsupportedProtocol*>(&e) ||
        dynamic_cast<const UnsupportedTopology*>(&e))
        return 5;
    if (dynamic_cast<const IoFailure*>(&e)) return 7;
    if (dynamic_cast<const InvalidSpec*>(&e) || dynamic_cast<const ShapeMismatch*>(&e) ||
        dynamic_cast<const CollapsedWidth*>(&e))
        return 8;
    if (dynamic_cast<const Error*>(&e)) return 1;
    return 9;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mtc — session-based traffic classification toolkit"};
    app.set_version_flag("--version", kToolVersion);
    app.fallthrough();
    app.require_subcommand(1);

    CommonArgs common;
    app.add_option("--seed", common.seed, "base RNG seed")->capture_default_str();
    app.add_option("--config", common.config_path, "key=value config file");
    app.add_option("--out-dir", common.out_dir, "output directory")->capture_default_str();
    app.add_option("--workers", common.workers, "parallel candidate trainings")
        ->capture_default_str();
    app.add_flag("--resume", common.resume, "resume search from checkpoint in --out-dir");

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a labeled synthetic pcap corpus");
    int classes = 4, sessions = 50;
    bool big_endian = false;
    synth->add_option("--classes", classes, "number of classes")->capture_default_str();
    synth->add_option("--sessions", sessions, "sessions per class")->capture_default_str();
    synth->add_flag("--big-endian", big_endian, "write big-endian pcap headers");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "pcap captures -> session record file");
    std::vector<std::string> pcap_paths;
    std::string labels_path, ingest_out;
    ingest->add_option("pcaps", pcap_paths, "capture files, one label per file")->required();
    ingest->add_option("--labels", labels_path, "label map TSV (index<TAB>name)")->required();
    ingest->add_option("--out", ingest_out, "output record file (default <out-dir>/records.bin)");

    // search
    auto* search = app.add_subcommand("search", "evolutionary architecture search");
    std::string search_records, initial_genome_path;
    std::vector<std::string> overrides;
    int stop_after = 0;
    search->add_option("--records", search_records, "record file")->required();
    search->add_option("--initial-genome", initial_genome_path, "starting genome text file");
    search->add_option("--set", overrides, "config override key=value (repeatable)");
    search->add_option("--stop-after", stop_after,
                       "stop at this generation boundary after checkpointing");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a genome into a float model");
    std::string train_records, genome_path;
    int epochs = 200, batch = 128;
    double holdout = 0.2;
    train_cmd->add_option("--records", train_records, "record file")->required();
    train_cmd->add_option("--genome", genome_path, "genome text file")->required();
    train_cmd->add_option("--epochs", epochs, "epoch cap")->capture_default_str();
    train_cmd->add_option("--batch", batch, "batch size")->capture_default_str();
    train_cmd->add_option("--holdout", holdout, "validation fraction")->capture_default_str();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model file on records");
    std::string eval_records, eval_model;
    eval_cmd->add_option("--records", eval_records, "record file")->required();
    eval_cmd->add_option("--model", eval_model, "model file (f32 or int8)")->required();

    // quantize
    auto* quant = app.add_subcommand("quantize", "post-training int8 quantization");
    std::string quant_records, quant_model;
    quant->add_option("--records", quant_records, "calibration/eval record file")->required();
    quant->add_option("--model", quant_model, "float model file")->required();

    // report
    auto* report = app.add_subcommand("report", "hardware cost report for an architecture");
    std::string report_genome, report_model, report_format = "text", report_out;
    bool paper_arch = false;
    report->add_option("--genome", report_genome, "genome text file");
    report->add_option("--model", report_model, "f32 model file");
    report->add_flag("--paper-arch", paper_arch, "use the built-in reference architecture");
    report->add_option("--format", report_format, "text or csv")
        ->check(CLI::IsMember({"text", "csv"}))
        ->capture_default_str();
    report->add_option("--out", report_out, "also write the report to this file");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    int trials = 5;
    gradcheck->add_option("--trials", trials, "number of random micro-models")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth_data(common, classes, sessions, big_endian);
        if (ingest->parsed()) return cmd_ingest(common, pcap_paths, labels_path, ingest_out);
        if (search->parsed())
            return cmd_search(common, search_records, initial_genome_path, stop_after, overrides);
        if (train_cmd->parsed())
            return cmd_train(common, train_records, genome_path, epochs, batch, holdout);
        if (eval_cmd->parsed()) return cmd_eval(common, eval_records, eval_model);
        if (quant->parsed()) return cmd_quantize(common, quant_records, quant_model);
        if (report->parsed())
            return cmd_report(common, report_genome, report_model, paper_arch, report_format,
                              report_out);
        if (gradcheck->parsed()) return cmd_gradcheck(common, trials);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return map_error_to_exit(e);
    }
    return 0;
}
