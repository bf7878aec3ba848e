#pragma once

// Configuration schema, persistence formats, and report/table writers.
//
// Config: one strict JSON file (unknown or missing keys are hard errors,
// reported with their key path).  Value grids and policies: a one-line JSON
// metadata header plus packed little-endian float64 array sections, carrying
// a content hash.  Tables: comma-separated with a commented header.  All
// files are written atomically (temp + rename).

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "qfc/dynprog.hpp"
#include "qfc/model.hpp"
#include "qfc/montecarlo.hpp"

namespace qfc {

struct RunConfig {
    TwoLevelParams model;
    Eigen::Vector3d initial_bloch{0.0, 0.0, 1.0};
    DpGridConfig dp;
    long n_paths = 10000;
    std::uint64_t master_seed = 1;
    std::string out_dir = "out";
    std::uint64_t config_hash = 0;  // hash of the resolved canonical form
};

RunConfig load_config(const std::string& path);
std::string canonical_config_string(const RunConfig& c);

// Binary container round trips are bitwise.
void save_value_grid(const std::string& path, const ValueGrid& vg,
                     std::uint64_t config_hash);
ValueGrid load_value_grid(const std::string& path);
void save_policy(const std::string& path, const Policy& pol,
                 std::uint64_t config_hash);
Policy load_policy(const std::string& path);

// Content hash a container file reports (recomputed and verified on load).
std::uint64_t container_content_hash(const std::string& path);
// Model hash stored in a container's metadata.
std::uint64_t container_model_hash(const std::string& path);

void atomic_write(const std::string& path, const std::string& bytes);

std::string render_cost_report(const CostReport& r, std::uint64_t config_hash);

void write_trajectories(const std::string& path,
                        const std::vector<TrajectoryRecord>& records,
                        const RunConfig& cfg);

// Streaming variant: records are appended one at a time and the file is
// moved into place on close (temp + rename), so long runs do not buffer
// every trajectory in memory.
class TrajectoryWriter {
public:
    TrajectoryWriter(const std::string& path, const RunConfig& cfg, long n_paths);
    ~TrajectoryWriter();
    TrajectoryWriter(const TrajectoryWriter&) = delete;
    TrajectoryWriter& operator=(const TrajectoryWriter&) = delete;

    void append(const TrajectoryRecord& record);
    void close();  // finalize and rename

private:
    std::string path_;
    std::string tmp_path_;
    long next_index_ = 0;
    bool closed_ = false;
    std::unique_ptr<std::ofstream> out_;
};

void write_master_table(const std::string& path, const MasterSeries& series,
                        std::uint64_t config_hash);

struct CompareRow {
    double mu;
    double j_a, se_a;
    double j_b, se_b;
};
void write_compare_table(const std::string& path,
                         const std::vector<CompareRow>& rows,
                         std::uint64_t config_hash, const std::string& note);

}  // namespace qfc
