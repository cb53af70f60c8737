// fog: command-line front end for the freezing-of-gait detection pipeline.
//
// Subcommands: preprocess, train, evaluate, quantize, simulate, roc.
// All randomness derives from one top-level seed; every command writes its
// resolved config and a run manifest next to its artifacts.

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fogmesh/bundle.hpp"
#include "fogmesh/daphnet.hpp"
#include "fogmesh/dsp.hpp"
#include "fogmesh/eval.hpp"
#include "fogmesh/nodesim.hpp"
#include "fogmesh/quant.hpp"
#include "fogmesh/secnn.hpp"
#include "fogmesh/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fogmesh;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUser = 2;

const std::array<const char*, 3> kSiteNames{"ankle", "thigh", "trunk"};

// bad invocation or missing prerequisite artifacts: exit code 2
struct UserError : Error {
    explicit UserError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// configuration

struct RunConfig {
    std::string data_root;
    std::string out_dir = "out";
    std::string input;  // simulate/roc input file
    std::uint64_t seed = 0;
    int fold_count = 4;
    double test_fraction = 0.20;
    bool subject_wise = false;
    double synthetic_seconds = 0.0;  // > 0 generates data instead of reading
    int synthetic_recordings = 6;
    bool quantized = false;
    bool strict = false;

    dsp::WindowingConfig windowing;
    dsp::FilterConfig filter;
    secnn::ModelConfig model;
    train::TrainConfig training;
    nodesim::VoteConfig vote;
    nodesim::TransportConfig transport;
};

json config_to_json(const RunConfig& c) {
    return json{
        {"data_root", c.data_root},
        {"out_dir", c.out_dir},
        {"input", c.input},
        {"seed", c.seed},
        {"fold_count", c.fold_count},
        {"test_fraction", c.test_fraction},
        {"subject_wise", c.subject_wise},
        {"synthetic_seconds", c.synthetic_seconds},
        {"synthetic_recordings", c.synthetic_recordings},
        {"quantized", c.quantized},
        {"strict", c.strict},
        {"windowing",
         {{"window_len", c.windowing.window_len},
          {"overlap", c.windowing.overlap},
          {"freeze_fraction_threshold", c.windowing.freeze_fraction_threshold},
          {"saturation_limit_mg", c.windowing.saturation_limit_mg}}},
        {"filter", {{"cutoff_hz", c.filter.cutoff_hz}, {"sample_rate_hz", c.filter.sample_rate_hz}}},
        {"model",
         {{"conv_channels", c.model.conv_channels},
          {"se_reduction", c.model.se_reduction},
          {"dense_units", c.model.dense_units},
          {"kernel_size", c.model.kernel_size},
          {"input_len", c.model.input_len},
          {"input_channels", c.model.input_channels},
          {"dropout_rate", c.model.dropout_rate}}},
        {"training",
         {{"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"learning_rate", c.training.learning_rate},
          {"patience", c.training.patience}}},
        {"vote", {{"threshold", c.vote.threshold}, {"quorum", c.vote.quorum}}},
        {"transport",
         {{"loss_probability", c.transport.loss_probability},
          {"latency_ms", c.transport.latency_ms},
          {"jitter_ms", c.transport.jitter_ms}}},
    };
}

void config_from_json(const json& j, RunConfig& c) {
    auto get = [&j](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("data_root", c.data_root);
    get("out_dir", c.out_dir);
    get("input", c.input);
    get("seed", c.seed);
    get("fold_count", c.fold_count);
    get("test_fraction", c.test_fraction);
    get("subject_wise", c.subject_wise);
    get("synthetic_seconds", c.synthetic_seconds);
    get("synthetic_recordings", c.synthetic_recordings);
    get("quantized", c.quantized);
    get("strict", c.strict);
    if (j.contains("windowing")) {
        const auto& w = j.at("windowing");
        if (w.contains("window_len")) c.windowing.window_len = w.at("window_len");
        if (w.contains("overlap")) c.windowing.overlap = w.at("overlap");
        if (w.contains("freeze_fraction_threshold"))
            c.windowing.freeze_fraction_threshold = w.at("freeze_fraction_threshold");
        if (w.contains("saturation_limit_mg"))
            c.windowing.saturation_limit_mg = w.at("saturation_limit_mg");
    }
    if (j.contains("filter")) {
        const auto& f = j.at("filter");
        if (f.contains("cutoff_hz")) c.filter.cutoff_hz = f.at("cutoff_hz");
        if (f.contains("sample_rate_hz")) c.filter.sample_rate_hz = f.at("sample_rate_hz");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        if (m.contains("conv_channels"))
            c.model.conv_channels = m.at("conv_channels").get<std::array<int, 3>>();
        if (m.contains("se_reduction")) c.model.se_reduction = m.at("se_reduction");
        if (m.contains("dense_units"))
            c.model.dense_units = m.at("dense_units").get<std::array<int, 2>>();
        if (m.contains("kernel_size")) c.model.kernel_size = m.at("kernel_size");
        if (m.contains("input_len")) c.model.input_len = m.at("input_len");
        if (m.contains("input_channels")) c.model.input_channels = m.at("input_channels");
        if (m.contains("dropout_rate")) c.model.dropout_rate = m.at("dropout_rate");
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        if (t.contains("epochs")) c.training.epochs = t.at("epochs");
        if (t.contains("batch_size")) c.training.batch_size = t.at("batch_size");
        if (t.contains("learning_rate")) c.training.learning_rate = t.at("learning_rate");
        if (t.contains("patience")) c.training.patience = t.at("patience");
    }
    if (j.contains("vote")) {
        const auto& v = j.at("vote");
        if (v.contains("threshold")) c.vote.threshold = v.at("threshold");
        if (v.contains("quorum")) c.vote.quorum = v.at("quorum");
    }
    if (j.contains("transport")) {
        const auto& t = j.at("transport");
        if (t.contains("loss_probability")) c.transport.loss_probability = t.at("loss_probability");
        if (t.contains("latency_ms")) c.transport.latency_ms = t.at("latency_ms");
        if (t.contains("jitter_ms")) c.transport.jitter_ms = t.at("jitter_ms");
    }
}

// ---------------------------------------------------------------------------
// small file and hashing utilities

std::uint64_t fnv64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    fs::rename(tmp, path);
}

// exclusive ownership of the output directory for the command's duration
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : lock_(dir / ".lock") {
        fs::create_directories(dir);
        if (fs::exists(lock_))
            throw UserError("output directory is locked by another run: " + lock_.string() +
                        " (remove the stale lock file if no run is active)");
        std::ofstream out(lock_);
        out << "pid " << ::getpid() << '\n';
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(lock_, ec);
    }

private:
    fs::path lock_;
};

// manifest accumulated per command: config hash, input checksums, artifacts
struct Manifest {
    std::string command;
    std::string config_hash;
    std::map<std::string, std::string> input_checksums;
    std::vector<std::string> artifacts;

    void add_input(const fs::path& p) { input_checksums[p.string()] = hex64(fnv64(read_file(p))); }
    void add_artifact(const fs::path& p) { artifacts.push_back(p.string()); }

    void write(const fs::path& out_dir) const {
        auto now = std::chrono::system_clock::now().time_since_epoch();
        json j{{"command", command},
               {"tool_version", kToolVersion},
               {"config_hash", config_hash},
               {"inputs", input_checksums},
               {"artifacts", artifacts},
               {"wall_clock_unix_ms",
                std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}};
        write_file_atomic(out_dir / "manifest.json", j.dump(2) + "\n");
    }
};

// ---------------------------------------------------------------------------
// window cache: "FOGC" | version | count | records

constexpr char kCacheMagic[4] = {'F', 'O', 'G', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

void save_windows(const fs::path& path, const std::vector<dsp::Window>& windows) {
    std::string bytes;
    auto put = [&bytes](const void* p, std::size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    };
    put(kCacheMagic, 4);
    put(&kCacheVersion, 4);
    std::uint64_t count = windows.size();
    put(&count, 8);
    for (const auto& w : windows) {
        std::uint8_t site = static_cast<std::uint8_t>(w.site);
        std::uint8_t label = static_cast<std::uint8_t>(w.label);
        std::int32_t subject = w.subject_id;
        std::uint64_t start = w.start_index;
        std::uint32_t len = static_cast<std::uint32_t>(w.data.size());
        put(&site, 1);
        put(&label, 1);
        put(&subject, 4);
        put(&start, 8);
        put(&len, 4);
        put(w.data.data(), len * sizeof(float));
    }
    write_file_atomic(path, bytes);
}

std::vector<dsp::Window> load_windows(const fs::path& path) {
    std::string bytes = read_file(path);
    std::size_t pos = 0;
    auto take = [&](void* p, std::size_t n) {
        if (pos + n > bytes.size()) throw BadMagic("truncated window cache: " + path.string());
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    };
    char magic[4];
    take(magic, 4);
    if (std::memcmp(magic, kCacheMagic, 4) != 0)
        throw BadMagic("not a window cache: " + path.string());
    std::uint32_t version;
    take(&version, 4);
    if (version != kCacheVersion) throw VersionMismatch("unsupported window cache version");
    std::uint64_t count;
    take(&count, 8);
    std::vector<dsp::Window> windows;
    windows.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        dsp::Window w;
        std::uint8_t site, label;
        std::int32_t subject;
        std::uint64_t start;
        std::uint32_t len;
        take(&site, 1);
        take(&label, 1);
        take(&subject, 4);
        take(&start, 8);
        take(&len, 4);
        w.site = static_cast<dsp::SensorSite>(site);
        w.label = static_cast<dsp::Label>(label);
        w.subject_id = subject;
        w.start_index = start;
        w.data.resize(len);
        take(w.data.data(), len * sizeof(float));
        windows.push_back(std::move(w));
    }
    return windows;
}

// ---------------------------------------------------------------------------
// dataset loading and preprocessing

std::string resolve_data_root(const RunConfig& cfg) {
    if (!cfg.data_root.empty()) return cfg.data_root;
    if (const char* env = std::getenv("FOGMESH_DATA"); env && *env) return env;
    throw UserError("no data root: pass --data-root, set FOGMESH_DATA, or use --synthetic");
}

std::vector<daphnet::SubjectRecording> load_recordings(const RunConfig& cfg) {
    if (cfg.synthetic_seconds > 0.0) {
        std::vector<daphnet::SubjectRecording> recs;
        double d = cfg.synthetic_seconds;
        for (int i = 0; i < cfg.synthetic_recordings; ++i) {
            // two freeze spans per recording, deterministic placement
            std::vector<nodesim::FreezeSegment> segs{{0.20 * d, 0.35 * d}, {0.60 * d, 0.80 * d}};
            auto rec = nodesim::gen_synthetic(d, segs, derive_seed(cfg.seed, "synthetic", i));
            rec.subject_id = i + 1;
            rec.trial_id = 1;
            recs.push_back(std::move(rec));
        }
        return recs;
    }
    return daphnet::load_dataset(resolve_data_root(cfg));
}

std::array<double, 3> site_sample(const daphnet::RawRecord& r, dsp::SensorSite site) {
    switch (site) {
        case dsp::SensorSite::Ankle: return r.ankle;
        case dsp::SensorSite::Thigh: return r.thigh;
        default: return r.trunk;
    }
}

// saturate -> centered median3 -> low-pass for one site of one recording
std::vector<dsp::Window> preprocess_site(const daphnet::SubjectRecording& rec,
                                         dsp::SensorSite site, const RunConfig& cfg) {
    std::array<std::vector<double>, 3> channels;
    std::vector<int> annotations;
    annotations.reserve(rec.records.size());
    for (const auto& r : rec.records) {
        auto s = site_sample(r, site);
        for (int c = 0; c < 3; ++c)
            channels[c].push_back(dsp::saturate_one(s[c], cfg.windowing.saturation_limit_mg));
        annotations.push_back(r.annotation);
    }
    double alpha = cfg.filter.alpha();
    for (auto& ch : channels) ch = dsp::lowpass(dsp::median3(ch), alpha);
    return dsp::segment_and_label(channels, annotations, cfg.windowing, rec.subject_id, site);
}

// per-site window pools, preserving recording order
std::array<std::vector<dsp::Window>, 3> preprocess_all(
    const std::vector<daphnet::SubjectRecording>& recordings, const RunConfig& cfg) {
    std::array<std::vector<dsp::Window>, 3> pools;
    for (const auto& rec : recordings)
        for (int s = 0; s < 3; ++s) {
            auto ws = preprocess_site(rec, static_cast<dsp::SensorSite>(s), cfg);
            auto& pool = pools[s];
            pool.insert(pool.end(), std::make_move_iterator(ws.begin()),
                        std::make_move_iterator(ws.end()));
        }
    return pools;
}

// ---------------------------------------------------------------------------
// splits

daphnet::DatasetSplit subject_wise_split(const std::vector<dsp::Window>& windows, int fold_count,
                                         double test_fraction, std::uint64_t seed) {
    std::vector<int> subjects;
    for (const auto& w : windows)
        if (std::find(subjects.begin(), subjects.end(), w.subject_id) == subjects.end())
            subjects.push_back(w.subject_id);
    if (subjects.size() < static_cast<std::size_t>(fold_count) + 1)
        throw TooFewWindows("subject-wise split needs more subjects than folds");

    Rng rng(seed);
    for (std::size_t i = subjects.size(); i > 1; --i)
        std::swap(subjects[i - 1], subjects[rng.next_below(i)]);

    std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(subjects.size())));
    std::map<int, int> assignment;  // subject -> fold or kTest
    for (std::size_t i = 0; i < subjects.size(); ++i)
        assignment[subjects[i]] = i < n_test ? daphnet::DatasetSplit::kTest
                                             : static_cast<int>((i - n_test) % fold_count);

    daphnet::DatasetSplit split;
    split.fold_count = fold_count;
    split.test_fraction = test_fraction;
    split.seed = seed;
    for (const auto& w : windows) split.fold_assignments.push_back(assignment.at(w.subject_id));
    return split;
}

json split_to_json(const std::array<daphnet::DatasetSplit, 3>& splits,
                   const std::array<std::vector<dsp::Window>, 3>& pools, bool subject_wise) {
    json j{{"fold_count", splits[0].fold_count},
           {"test_fraction", splits[0].test_fraction},
           {"seed", splits[0].seed},
           {"subject_wise", subject_wise}};
    for (int s = 0; s < 3; ++s) j["assignments"][kSiteNames[s]] = splits[s].fold_assignments;
    if (subject_wise) {
        // subject ids per fold (identical across sites by construction)
        std::map<std::string, std::set<int>> per_fold;
        for (std::size_t i = 0; i < pools[0].size(); ++i) {
            int f = splits[0].fold_assignments[i];
            std::string key = f == daphnet::DatasetSplit::kTest ? "test" : std::to_string(f);
            per_fold[key].insert(pools[0][i].subject_id);
        }
        for (const auto& [key, subs] : per_fold)
            j["subjects_per_fold"][key] = std::vector<int>(subs.begin(), subs.end());
    }
    return j;
}

std::array<daphnet::DatasetSplit, 3> split_from_json(const json& j) {
    std::array<daphnet::DatasetSplit, 3> splits;
    for (int s = 0; s < 3; ++s) {
        splits[s].fold_count = j.at("fold_count");
        splits[s].test_fraction = j.at("test_fraction");
        splits[s].seed = j.at("seed");
        splits[s].fold_assignments =
            j.at("assignments").at(kSiteNames[s]).get<std::vector<int>>();
    }
    return splits;
}

// ---------------------------------------------------------------------------
// shared artifact paths

fs::path windows_path(const RunConfig& c) { return fs::path(c.out_dir) / "windows.fogc"; }
fs::path split_path(const RunConfig& c) { return fs::path(c.out_dir) / "split.json"; }
fs::path bundle_path(const RunConfig& c, int site, int fold) {
    return fs::path(c.out_dir) /
           ("bundle_" + std::string(kSiteNames[site]) + "_fold" + std::to_string(fold) + ".fogw");
}
fs::path qmodel_path(const RunConfig& c, int site, int fold) {
    return fs::path(c.out_dir) /
           ("qmodel_" + std::string(kSiteNames[site]) + "_fold" + std::to_string(fold) + ".fogq");
}

std::array<std::vector<dsp::Window>, 3> split_pools(const std::vector<dsp::Window>& all) {
    std::array<std::vector<dsp::Window>, 3> pools;
    for (const auto& w : all) pools[static_cast<int>(w.site)].push_back(w);
    return pools;
}

std::vector<std::size_t> indices_of(const daphnet::DatasetSplit& split, int fold) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.fold_assignments.size(); ++i)
        if (split.fold_assignments[i] == fold) idx.push_back(i);
    return idx;
}

// ensemble-mean probabilities of one site's fold models over given windows
std::vector<double> ensemble_probs(const RunConfig& cfg, int site,
                                   const std::vector<dsp::Window>& windows,
                                   const std::vector<std::size_t>& idx, bool quantized) {
    std::vector<double> probs(idx.size(), 0.0);
    int folds = cfg.fold_count;
    for (int f = 0; f < folds; ++f) {
        auto bundle = secnn::load_bundle(bundle_path(cfg, site, f).string());
        auto model = secnn::model_from_bundle(bundle);
        std::optional<quant::QModel> qm;
        if (quantized) qm = quant::load_qmodel(qmodel_path(cfg, site, f).string());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto x = train::normalize_window(windows[idx[i]], bundle.norm);
            probs[i] += quantized ? quant::forward_q(*qm, x)
                                  : static_cast<double>(secnn::forward(model, x));
        }
    }
    for (auto& p : probs) p /= folds;
    return probs;
}

void write_probs_csv(const fs::path& path, const std::vector<double>& probs,
                     const std::vector<int>& labels) {
    std::ostringstream out;
    out << "probability,label\n";
    char buf[48];
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9f,%d\n", probs[i], labels[i]);
        out << buf;
    }
    write_file_atomic(path, out.str());
}

std::pair<std::vector<double>, std::vector<int>> read_probs_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> probs;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        double p;
        int y;
        if (std::sscanf(line.c_str(), "%lf,%d", &p, &y) != 2)
            throw MalformedLine(static_cast<int>(line_no));
        probs.push_back(p);
        labels.push_back(y);
    }
    return {probs, labels};
}

// ---------------------------------------------------------------------------
// commands

int cmd_preprocess(const RunConfig& cfg) {
    DirLock lock(cfg.out_dir);
    Manifest mf;
    mf.command = "preprocess";
    mf.config_hash = hex64(fnv64(config_to_json(cfg).dump()));

    auto recordings = load_recordings(cfg);
    if (cfg.synthetic_seconds <= 0.0) {
        // checksums of the source files for provenance
        for (const auto& entry : fs::directory_iterator(resolve_data_root(cfg)))
            if (entry.is_regular_file() && entry.path().extension() == ".txt")
                mf.add_input(entry.path());
    }
    auto pools = preprocess_all(recordings, cfg);

    std::vector<dsp::Window> all;
    for (auto& pool : pools) all.insert(all.end(), pool.begin(), pool.end());
    save_windows(windows_path(cfg), all);
    mf.add_artifact(windows_path(cfg));

    std::array<daphnet::DatasetSplit, 3> splits;
    for (int s = 0; s < 3; ++s) {
        std::uint64_t site_seed = derive_seed(cfg.seed, "split", s);
        splits[s] = cfg.subject_wise
                        ? subject_wise_split(pools[s], cfg.fold_count, cfg.test_fraction, site_seed)
                        : daphnet::make_split(pools[s].size(), cfg.fold_count, cfg.test_fraction,
                                              site_seed);
    }
    write_file_atomic(split_path(cfg),
                      split_to_json(splits, pools, cfg.subject_wise).dump(2) + "\n");
    mf.add_artifact(split_path(cfg));

    json balance;
    for (int s = 0; s < 3; ++s) {
        auto b = train::class_balance(pools[s]);
        std::size_t test_n = splits[s].test_count();
        balance[kSiteNames[s]] = {{"windows", pools[s].size()},
                                  {"freeze", b.n_freeze},
                                  {"no_freeze", b.n_nofreeze},
                                  {"test_windows", test_n},
                                  {"realized_freeze_ratio",
                                   pools[s].empty() ? 0.0
                                                    : static_cast<double>(b.n_freeze) /
                                                          static_cast<double>(pools[s].size())}};
    }
    write_file_atomic(fs::path(cfg.out_dir) / "class_balance.json", balance.dump(2) + "\n");
    mf.add_artifact(fs::path(cfg.out_dir) / "class_balance.json");
    mf.write(cfg.out_dir);

    std::cout << "preprocess: " << all.size() << " windows across 3 sites -> " << cfg.out_dir
              << '\n';
    return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
    DirLock lock(cfg.out_dir);
    Manifest mf;
    mf.command = "train";
    mf.config_hash = hex64(fnv64(config_to_json(cfg).dump()));
    mf.add_input(windows_path(cfg));
    mf.add_input(split_path(cfg));

    auto pools = split_pools(load_windows(windows_path(cfg)));
    auto splits = split_from_json(json::parse(read_file(split_path(cfg))));

    std::vector<eval::ReportRow> rows;
    for (int s = 0; s < 3; ++s) {
        auto model_cfg = cfg.model;
        auto train_cfg = cfg.training;
        train_cfg.seed = derive_seed(cfg.seed, "train-site", s);
        auto cv = train::cross_validate(pools[s], splits[s], model_cfg, train_cfg,
                                        cfg.vote.threshold);
        for (int f = 0; f < cfg.fold_count; ++f) {
            secnn::save_bundle(bundle_path(cfg, s, f).string(), cv.folds[f].bundle);
            mf.add_artifact(bundle_path(cfg, s, f));

            eval::ReportRow row;
            row.name = std::string(kSiteNames[s]) + "-fold" + std::to_string(f);
            row.threshold_label = "0.4";
            row.threshold = cfg.vote.threshold;
            row.metrics = cv.fold_metrics[f];
            rows.push_back(row);
        }
        eval::ReportRow agg;
        agg.name = std::string(kSiteNames[s]) + "-aggregate";
        agg.threshold_label = "0.4";
        agg.threshold = cfg.vote.threshold;
        agg.metrics = cv.aggregate;
        agg.param_count = secnn::count_params(model_cfg);
        rows.push_back(agg);

        write_probs_csv(fs::path(cfg.out_dir) /
                            ("test_probs_" + std::string(kSiteNames[s]) + ".csv"),
                        cv.test_probabilities, cv.test_labels);
        mf.add_artifact(fs::path(cfg.out_dir) /
                        ("test_probs_" + std::string(kSiteNames[s]) + ".csv"));

        json hist;
        for (int f = 0; f < cfg.fold_count; ++f)
            hist["folds"].push_back({{"train_loss", cv.folds[f].history.train_loss},
                                     {"val_loss", cv.folds[f].history.val_loss},
                                     {"val_f1", cv.folds[f].history.val_f1}});
        write_file_atomic(fs::path(cfg.out_dir) /
                              ("history_" + std::string(kSiteNames[s]) + ".json"),
                          hist.dump(2) + "\n");
    }

    std::ostringstream csv;
    eval::write_metrics_csv(csv, rows);
    write_file_atomic(fs::path(cfg.out_dir) / "metrics.csv", csv.str());
    mf.add_artifact(fs::path(cfg.out_dir) / "metrics.csv");
    mf.write(cfg.out_dir);
    std::cout << "train: " << 3 * cfg.fold_count << " bundles -> " << cfg.out_dir << '\n';
    return kExitOk;
}

int cmd_quantize(const RunConfig& cfg) {
    DirLock lock(cfg.out_dir);
    Manifest mf;
    mf.command = "quantize";
    mf.config_hash = hex64(fnv64(config_to_json(cfg).dump()));
    mf.add_input(windows_path(cfg));
    mf.add_input(split_path(cfg));

    auto pools = split_pools(load_windows(windows_path(cfg)));
    auto splits = split_from_json(json::parse(read_file(split_path(cfg))));

    for (int s = 0; s < 3; ++s)
        for (int f = 0; f < cfg.fold_count; ++f) {
            auto bundle = secnn::load_bundle(bundle_path(cfg, s, f).string());
            auto model = secnn::model_from_bundle(bundle);
            // calibrate on the fold's training windows (everything that is
            // neither test nor this fold's validation share)
            std::vector<std::vector<float>> calib;
            for (std::size_t i = 0; i < pools[s].size(); ++i) {
                int a = splits[s].fold_assignments[i];
                if (a == daphnet::DatasetSplit::kTest || a == f) continue;
                calib.push_back(train::normalize_window(pools[s][i], bundle.norm));
            }
            auto qm = quant::quantize(bundle, quant::calibrate(model, calib));
            quant::save_qmodel(qmodel_path(cfg, s, f).string(), qm);
            mf.add_artifact(qmodel_path(cfg, s, f));
        }
    mf.write(cfg.out_dir);
    std::cout << "quantize: " << 3 * cfg.fold_count << " quantized models -> " << cfg.out_dir
              << '\n';
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg) {
    DirLock lock(cfg.out_dir);
    Manifest mf;
    mf.command = "evaluate";
    mf.config_hash = hex64(fnv64(config_to_json(cfg).dump()));
    mf.add_input(windows_path(cfg));
    mf.add_input(split_path(cfg));

    auto pools = split_pools(load_windows(windows_path(cfg)));
    auto splits = split_from_json(json::parse(read_file(split_path(cfg))));

    bool have_qmodels = fs::exists(qmodel_path(cfg, 0, 0));
    if (cfg.quantized && !have_qmodels)
        throw UserError("no quantized models in " + cfg.out_dir + "; run quantize first");
    if (!fs::exists(bundle_path(cfg, 0, 0)))
        throw UserError("no bundles in " + cfg.out_dir + "; run train first");

    // pooled test-set probabilities over all three sites
    std::vector<double> float_probs, quant_probs;
    std::vector<int> labels;
    for (int s = 0; s < 3; ++s) {
        auto test_idx = indices_of(splits[s], daphnet::DatasetSplit::kTest);
        auto pf = ensemble_probs(cfg, s, pools[s], test_idx, false);
        float_probs.insert(float_probs.end(), pf.begin(), pf.end());
        if (have_qmodels) {
            auto pq = ensemble_probs(cfg, s, pools[s], test_idx, true);
            quant_probs.insert(quant_probs.end(), pq.begin(), pq.end());
        }
        for (std::size_t i : test_idx)
            labels.push_back(pools[s][i].label == dsp::Label::Freeze ? 1 : 0);
    }

    auto grid = eval::default_threshold_grid();
    auto float_roc = eval::roc(float_probs, labels, grid);
    double best = eval::best_threshold(float_roc);

    std::vector<eval::ReportRow> rows;
    auto add_rows = [&](const std::string& name, const std::vector<double>& probs,
                        const eval::RocCurve& curve, double best_thr) {
        for (auto [label, thr] : {std::pair<std::string, double>{"0.4", cfg.vote.threshold},
                                  std::pair<std::string, double>{"best", best_thr}}) {
            eval::ReportRow row;
            row.name = name;
            row.threshold_label = label;
            row.threshold = thr;
            row.metrics = eval::metrics(eval::confusion(probs, labels, thr));
            row.auc = curve.auc;
            row.param_count = secnn::count_params(cfg.model);
            rows.push_back(row);
        }
    };
    add_rows("this-work-float", float_probs, float_roc, best);

    std::optional<double> auc_gap;
    if (have_qmodels) {
        auto quant_roc = eval::roc(quant_probs, labels, grid);
        add_rows("this-work-quantized", quant_probs, quant_roc,
                 eval::best_threshold(quant_roc));
        auc_gap = std::abs(float_roc.auc - quant_roc.auc);
        std::ostringstream qroc;
        eval::write_roc_csv(qroc, quant_roc);
        write_file_atomic(fs::path(cfg.out_dir) / "roc_quantized.csv", qroc.str());
        mf.add_artifact(fs::path(cfg.out_dir) / "roc_quantized.csv");
    }

    // include a simulated-voting row when a simulation summary is present
    std::vector<std::string> notes;
    fs::path sim_summary = fs::path(cfg.out_dir) / "sim_summary.json";
    if (fs::exists(sim_summary)) {
        auto j = json::parse(read_file(sim_summary));
        const auto& c = j.at("confusion");
        eval::ConfusionCounts cc{c.at("tp"), c.at("tn"), c.at("fp"), c.at("fn")};
        eval::ReportRow row;
        row.name = "this-work-simulated-voting";
        row.threshold_label = "0.4";
        row.threshold = cfg.vote.threshold;
        row.metrics = eval::metrics(cc);
        rows.push_back(row);
        notes.push_back("simulated-voting row scores epoch-level majority votes from the most "
                        "recent simulate run");
    }
    auto refs = eval::reference_rows();
    rows.insert(rows.end(), refs.begin(), refs.end());
    notes.push_back("this-work rows are window-level test-set metrics with fold-ensemble mean "
                    "probabilities; both the fixed 0.4 threshold and the Youden-J best "
                    "threshold are shown");

    std::ostringstream csv, roc_csv, md;
    eval::write_metrics_csv(csv, rows);
    eval::write_roc_csv(roc_csv, float_roc);
    eval::write_report_md(md, rows, notes);
    write_file_atomic(fs::path(cfg.out_dir) / "metrics.csv", csv.str());
    write_file_atomic(fs::path(cfg.out_dir) / "roc.csv", roc_csv.str());
    write_file_atomic(fs::path(cfg.out_dir) / "report.md", md.str());
    write_probs_csv(fs::path(cfg.out_dir) / "test_probs.csv", float_probs, labels);
    for (const char* name : {"metrics.csv", "roc.csv", "report.md", "test_probs.csv"})
        mf.add_artifact(fs::path(cfg.out_dir) / name);
    mf.write(cfg.out_dir);

    std::cout << "evaluate: float AUC " << float_roc.auc;
    if (auc_gap) std::cout << ", quantized AUC gap " << *auc_gap;
    std::cout << " -> " << cfg.out_dir << '\n';
    if (cfg.strict) {
        if (!auc_gap) throw UserError("--strict needs quantized models; run quantize first");
        if (*auc_gap > 0.02) {
            std::cerr << "strict: quantized AUC gap " << *auc_gap << " exceeds 0.02\n";
            return kExitInternal;
        }
    }
    return kExitOk;
}

int cmd_simulate(const RunConfig& cfg) {
    DirLock lock(cfg.out_dir);
    Manifest mf;
    mf.command = "simulate";
    mf.config_hash = hex64(fnv64(config_to_json(cfg).dump()));

    daphnet::SubjectRecording rec;
    if (!cfg.input.empty()) {
        std::ifstream in(cfg.input);
        if (!in) throw UserError("cannot open recording: " + cfg.input);
        rec = daphnet::parse_daphnet_file(in, 0, 0);
        mf.add_input(cfg.input);
    } else {
        double d = cfg.synthetic_seconds > 0.0 ? cfg.synthetic_seconds : 600.0;
        rec = nodesim::gen_synthetic(d, {{0.20 * d, 0.35 * d}, {0.60 * d, 0.80 * d}},
                                     derive_seed(cfg.seed, "sim-recording", 0));
    }

    std::array<secnn::WeightsBundle, 3> bundles;
    std::array<std::optional<quant::QModel>, 3> qstore;
    std::array<const quant::QModel*, 3> qmodels{nullptr, nullptr, nullptr};
    for (int s = 0; s < 3; ++s) {
        bundles[s] = secnn::load_bundle(bundle_path(cfg, s, 0).string());
        mf.add_input(bundle_path(cfg, s, 0));
        if (cfg.quantized) {
            qstore[s] = quant::load_qmodel(qmodel_path(cfg, s, 0).string());
            qmodels[s] = &*qstore[s];
        }
    }

    nodesim::SimConfig sim;
    sim.transport = cfg.transport;
    sim.transport.seed = derive_seed(cfg.seed, "transport-root", 0);
    sim.vote = cfg.vote;
    sim.quantized = cfg.quantized;
    sim.windowing = cfg.windowing;
    sim.filter = cfg.filter;
    auto trace = nodesim::run_simulation(rec, bundles, qmodels, sim);

    std::ostringstream jsonl;
    nodesim::write_trace_jsonl(jsonl, trace);
    write_file_atomic(fs::path(cfg.out_dir) / "trace.jsonl", jsonl.str());
    write_file_atomic(fs::path(cfg.out_dir) / "sim_summary.json",
                      nodesim::trace_summary_json(trace) + "\n");
    mf.add_artifact(fs::path(cfg.out_dir) / "trace.jsonl");
    mf.add_artifact(fs::path(cfg.out_dir) / "sim_summary.json");
    mf.write(cfg.out_dir);

    std::cout << "simulate: " << trace.frames.size() << " epochs, " << trace.alerts.size()
              << " alerts -> " << cfg.out_dir << '\n';
    if (cfg.transport.loss_probability >= 1.0 && trace.alerts.empty())
        std::cerr << "warning: loss probability 1.0 suppresses every alert\n";
    return kExitOk;
}

int cmd_roc(const RunConfig& cfg) {
    DirLock lock(cfg.out_dir);
    Manifest mf;
    mf.command = "roc";
    mf.config_hash = hex64(fnv64(config_to_json(cfg).dump()));

    fs::path in = cfg.input.empty() ? fs::path(cfg.out_dir) / "test_probs.csv"
                                    : fs::path(cfg.input);
    if (!fs::exists(in)) throw UserError("no probability file: " + in.string());
    mf.add_input(in);
    auto [probs, labels] = read_probs_csv(in);
    auto curve = eval::roc(probs, labels, eval::default_threshold_grid());

    std::ostringstream out;
    eval::write_roc_csv(out, curve);
    write_file_atomic(fs::path(cfg.out_dir) / "roc.csv", out.str());
    mf.add_artifact(fs::path(cfg.out_dir) / "roc.csv");
    mf.write(cfg.out_dir);
    std::cout << "roc: AUC " << curve.auc << ", best threshold "
              << eval::best_threshold(curve) << " -> " << cfg.out_dir << '\n';
    return kExitOk;
}

bool is_user_error(const Error& e) {
    return dynamic_cast<const UserError*>(&e) ||
           dynamic_cast<const MissingDataset*>(&e) || dynamic_cast<const MalformedLine*>(&e) ||
           dynamic_cast<const NonMonotonicTime*>(&e) || dynamic_cast<const BadMagic*>(&e) ||
           dynamic_cast<const VersionMismatch*>(&e) || dynamic_cast<const TooFewWindows*>(&e) ||
           dynamic_cast<const TooFewSamples*>(&e) || dynamic_cast<const SignalTooShort*>(&e);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"freezing-of-gait detection pipeline"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");
    auto* seed_opt = app.add_option("--seed", cfg.seed, "top-level seed");
    auto* out_opt = app.add_option("--out", cfg.out_dir, "output directory");
    auto* quant_flag = app.add_flag("--quantized", cfg.quantized, "use the int8 path");
    auto* strict_flag = app.add_flag("--strict", cfg.strict, "fail on conformance violations");
    auto* data_opt = app.add_option("--data-root", cfg.data_root, "dataset directory");
    auto* folds_opt = app.add_option("--folds", cfg.fold_count, "cross-validation folds");
    auto* frac_opt = app.add_option("--test-frac", cfg.test_fraction, "held-out test fraction");
    auto* subj_flag = app.add_flag("--subject-wise", cfg.subject_wise, "split by subject");
    auto* synth_opt =
        app.add_option("--synthetic", cfg.synthetic_seconds, "seconds of generated data");
    auto* loss_opt =
        app.add_option("--loss", cfg.transport.loss_probability, "message loss probability");
    auto* lat_opt = app.add_option("--latency-ms", cfg.transport.latency_ms, "transport latency");
    auto* jit_opt = app.add_option("--jitter-ms", cfg.transport.jitter_ms, "latency jitter");
    auto* thr_opt = app.add_option("--threshold", cfg.vote.threshold, "decision threshold");
    auto* epochs_opt = app.add_option("--epochs", cfg.training.epochs, "training epochs");
    auto* input_opt = app.add_option("--input", cfg.input, "input file (simulate/roc)");

    auto* preprocess = app.add_subcommand("preprocess", "segment recordings into window caches");
    auto* train_cmd = app.add_subcommand("train", "cross-validated training per site");
    auto* evaluate = app.add_subcommand("evaluate", "test-set metrics, ROC, report");
    auto* quantize = app.add_subcommand("quantize", "int8 post-training quantization");
    auto* simulate = app.add_subcommand("simulate", "three-node voting simulation");
    auto* roc_cmd = app.add_subcommand("roc", "ROC curve from saved probabilities");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUser;
    }

    try {
        if (!config_path.empty())
            config_from_json(json::parse(read_file(config_path)), cfg);
        // flags win over the config file: re-apply any that were given
        auto override_if = [](CLI::Option* opt, auto& dst) {
            if (opt->count() > 0) dst = opt->template as<std::decay_t<decltype(dst)>>();
        };
        override_if(seed_opt, cfg.seed);
        override_if(out_opt, cfg.out_dir);
        override_if(data_opt, cfg.data_root);
        override_if(folds_opt, cfg.fold_count);
        override_if(frac_opt, cfg.test_fraction);
        override_if(synth_opt, cfg.synthetic_seconds);
        override_if(loss_opt, cfg.transport.loss_probability);
        override_if(lat_opt, cfg.transport.latency_ms);
        override_if(jit_opt, cfg.transport.jitter_ms);
        override_if(thr_opt, cfg.vote.threshold);
        override_if(epochs_opt, cfg.training.epochs);
        override_if(input_opt, cfg.input);
        if (quant_flag->count() > 0) cfg.quantized = true;
        if (strict_flag->count() > 0) cfg.strict = true;
        if (subj_flag->count() > 0) cfg.subject_wise = true;

        cfg.model.seed = cfg.seed;
        cfg.training.seed = cfg.seed;

        fs::create_directories(cfg.out_dir);
        write_file_atomic(fs::path(cfg.out_dir) / "config.json",
                          config_to_json(cfg).dump(2) + "\n");

        if (preprocess->parsed()) return cmd_preprocess(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        if (quantize->parsed()) return cmd_quantize(cfg);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (roc_cmd->parsed()) return cmd_roc(cfg);
        return kExitUser;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return is_user_error(e) ? kExitUser : kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}
