#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fogmesh/common.hpp"

namespace fogmesh::daphnet {

// One line of a Daphnet file: time + three 3-axis accelerometers + label.
struct RawRecord {
    std::int64_t time_ms = 0;
    std::array<double, 3> ankle{};  // milli-g
    std::array<double, 3> thigh{};
    std::array<double, 3> trunk{};
    int annotation = 0;  // 0 irrelevant, 1 no-freeze, 2 freeze

    bool operator==(const RawRecord&) const = default;
};

struct SubjectRecording {
    int subject_id = 0;
    int trial_id = 0;
    std::vector<RawRecord> records;
    int sample_rate_hz = 64;

    bool operator==(const SubjectRecording&) const = default;
};

// Subjects 5 and 10 had no freezing episodes and are excluded everywhere.
inline bool subject_excluded(int subject_id) {
    return subject_id == 5 || subject_id == 10;
}

struct DatasetSplit {
    int fold_count = 4;
    double test_fraction = 0.20;
    std::uint64_t seed = 0;
    // window index -> fold id in [0, fold_count), or kTest
    static constexpr int kTest = -1;
    std::vector<int> fold_assignments;

    std::size_t test_count() const;
    std::vector<std::size_t> fold_sizes() const;
};

SubjectRecording parse_daphnet_file(std::istream& in, int subject_id, int trial_id);
SubjectRecording parse_daphnet_file(const std::string& path, int subject_id, int trial_id);

// Inverse of parse: 11-column whitespace-separated text.
void write_daphnet_file(std::ostream& out, const SubjectRecording& rec);

// Load every S%02dR%02d.txt under root, skipping subjects 5 and 10.
// Sorted by (subject_id, trial_id). Throws MissingDataset when no Daphnet
// files exist at all (a directory holding only excluded subjects is valid).
std::vector<SubjectRecording> load_dataset(const std::string& root_path);

// Deterministic shuffled split: round(test_fraction*N) test windows, the
// remainder balanced across folds (sizes differ by at most one).
DatasetSplit make_split(std::size_t window_count, int fold_count, double test_fraction,
                        std::uint64_t seed);

}  // namespace fogmesh::daphnet
