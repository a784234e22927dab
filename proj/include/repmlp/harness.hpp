#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repmlp/block.hpp"

namespace repmlp {

enum class Precision { f32, f64 };

Precision parse_precision(const std::string& s);
const char* precision_name(Precision p);
double default_tolerance(Precision p);  // 1e-4 for f32, 1e-9 for f64

// Parses names produced by RepMLPConfig::name(), e.g. "C4_O8_H12W14_h6w7_g2_K1-3".
RepMLPConfig parse_config_name(const std::string& name);

struct GridCell {
  int64_t index = 0;  // position in the full enumeration
  RepMLPConfig cfg;
};

/// All configurations of the equivalence grid: C, O in {2,4,8}; h, w in
/// {4,6,7}; g in {1,2,4} dividing C and O; H/h, W/w in {1,2,3}; every subset
/// of {1,3,5,7} with K <= min(h, w). Order is fixed.
std::vector<GridCell> full_grid();

/// "full", "default" (256 cells), "quick" (32 cells) or a single cell name.
std::vector<GridCell> select_grid(const std::string& spec);

struct VerifyOptions {
  uint64_t seed = 0;
  Precision precision = Precision::f32;
  double tolerance = -1.0;  // < 0 selects default_tolerance
  int64_t batch = 2;
  std::string grid = "default";
};

struct CellResult {
  GridCell cell;
  double max_abs_diff = 0.0;
  bool pass = false;
};

struct VerifyReport {
  VerifyOptions options;
  std::vector<CellResult> cells;
  int64_t failures() const;
  std::string text() const;
};

/// Train-form vs converted forward on every selected cell. Cells run in
/// parallel; weights and inputs depend only on (seed, cell index).
VerifyReport run_verify(const VerifyOptions& opt);

// Max |train - infer| for one configuration.
double verify_cell(const RepMLPConfig& cfg, uint64_t seed, int64_t index, Precision p, int64_t batch);

/// W[o, i, j, c, :, :] of an FC3 kernel viewed as (O, h, w, C/g, h, w):
/// ln(max(|w|, m) / m) with m the smallest |entry| of the whole kernel,
/// floored at the smallest positive float. Returns h rows of w values.
std::vector<std::vector<double>> export_fc3(const RepMLPConfig& cfg, const FcSpec<float>& fc3, int64_t o,
                                            int64_t i, int64_t j, int64_t c);
std::string grid_to_csv(const std::vector<std::vector<double>>& grid);

// Mean raw |W[o, i, j, c, y, x]| over the k x k window centred on (i, j),
// clipped to the partition.
double window_mean_abs(const RepMLPConfig& cfg, const FcSpec<float>& fc3, int64_t o, int64_t i, int64_t j,
                       int64_t c, int64_t k);

struct Timing {
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double mad_ms = 0.0;  // median absolute deviation
};

Timing summarize(std::vector<double> samples_ms);

struct BenchOptions {
  RepMLPConfig cfg;
  int64_t batch = 8;
  int64_t repeats = 5;
  uint64_t seed = 0;
  Precision precision = Precision::f32;
};

struct BenchReport {
  BenchOptions options;
  Timing train;
  Timing infer;
  std::vector<std::string> warnings;
  // Converted form must not be slower when the block has branches.
  bool direction_ok() const;
  std::string text() const;
};

BenchReport run_bench(const BenchOptions& opt);

}  // namespace repmlp
