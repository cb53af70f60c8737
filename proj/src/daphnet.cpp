#include "fogmesh/daphnet.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace fogmesh::daphnet {

std::size_t DatasetSplit::test_count() const {
    return static_cast<std::size_t>(
        std::count(fold_assignments.begin(), fold_assignments.end(), kTest));
}

std::vector<std::size_t> DatasetSplit::fold_sizes() const {
    std::vector<std::size_t> sizes(fold_count, 0);
    for (int f : fold_assignments)
        if (f != kTest) ++sizes[f];
    return sizes;
}

namespace {

bool parse_fields(const std::string& line, std::array<double, 11>& fields) {
    std::istringstream ss(line);
    for (auto& f : fields)
        if (!(ss >> f)) return false;
    double extra;
    if (ss >> extra) return false;  // more than 11 columns
    return true;
}

}  // namespace

SubjectRecording parse_daphnet_file(std::istream& in, int subject_id, int trial_id) {
    SubjectRecording rec;
    rec.subject_id = subject_id;
    rec.trial_id = trial_id;

    std::string line;
    int line_no = 0;
    std::int64_t last_time = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;

        std::array<double, 11> f{};
        if (!parse_fields(line, f)) throw MalformedLine(line_no);

        RawRecord r;
        r.time_ms = static_cast<std::int64_t>(std::llround(f[0]));
        r.ankle = {f[1], f[2], f[3]};
        r.thigh = {f[4], f[5], f[6]};
        r.trunk = {f[7], f[8], f[9]};
        double ann = f[10];
        if (ann != 0.0 && ann != 1.0 && ann != 2.0) throw MalformedLine(line_no);
        r.annotation = static_cast<int>(ann);

        if (last_time >= 0 && r.time_ms <= last_time) throw NonMonotonicTime(line_no);
        last_time = r.time_ms;
        rec.records.push_back(r);
    }
    return rec;
}

SubjectRecording parse_daphnet_file(const std::string& path, int subject_id, int trial_id) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return parse_daphnet_file(in, subject_id, trial_id);
}

void write_daphnet_file(std::ostream& out, const SubjectRecording& rec) {
    for (const auto& r : rec.records) {
        out << r.time_ms;
        for (double v : r.ankle) out << ' ' << v;
        for (double v : r.thigh) out << ' ' << v;
        for (double v : r.trunk) out << ' ' << v;
        out << ' ' << r.annotation << '\n';
    }
}

std::vector<SubjectRecording> load_dataset(const std::string& root_path) {
    // Daphnet files are named S<subject>R<trial>.txt, e.g. S01R02.txt.
    std::vector<std::tuple<int, int, std::string>> found;
    std::error_code ec;
    for (const auto& entry : fs::recursive_directory_iterator(root_path, ec)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        int subj = 0, trial = 0;
        if (std::sscanf(name.c_str(), "S%dR%d.txt", &subj, &trial) == 2)
            found.emplace_back(subj, trial, entry.path().string());
    }
    if (found.empty()) throw MissingDataset(root_path);

    std::sort(found.begin(), found.end());
    std::vector<SubjectRecording> out;
    for (const auto& [subj, trial, path] : found) {
        if (subject_excluded(subj)) continue;
        out.push_back(parse_daphnet_file(path, subj, trial));
    }
    return out;
}

DatasetSplit make_split(std::size_t window_count, int fold_count, double test_fraction,
                        std::uint64_t seed) {
    if (fold_count < 1) throw Error("make_split: fold_count must be >= 1");
    auto test_count = static_cast<std::size_t>(std::llround(test_fraction * window_count));
    if (window_count < test_count + static_cast<std::size_t>(fold_count))
        throw TooFewWindows("make_split: " + std::to_string(window_count) +
                            " windows cannot fill " + std::to_string(fold_count) + " folds");

    std::vector<std::size_t> order(window_count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "split"));
    for (std::size_t i = window_count; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);

    DatasetSplit split;
    split.fold_count = fold_count;
    split.test_fraction = test_fraction;
    split.seed = seed;
    split.fold_assignments.assign(window_count, DatasetSplit::kTest);
    for (std::size_t i = test_count; i < window_count; ++i)
        split.fold_assignments[order[i]] =
            static_cast<int>((i - test_count) % static_cast<std::size_t>(fold_count));
    return split;
}

}  // namespace fogmesh::daphnet
