#pragma once

#include <map>
#include <string>
#include <vector>

#include "towerlab/analyze.hpp"
#include "towerlab/train.hpp"

namespace towerlab {

struct ReportInputs {
  EvalMatrix matrix;
  std::map<std::string, BaselineEstimate> baselines;  // keyed by task name
  std::vector<ProbeResult> probes;
  std::vector<std::pair<std::string, TrainLog>> logs;  // (label, log)
};

// Writes matrix.csv / matrix.svg, probes.csv / probes.svg, train_logs.svg and
// summary.html into out_dir. Pure function of its inputs: re-emitting the same
// inputs produces byte-identical files.
void emit_report(const ReportInputs& inputs, const std::string& out_dir);

}  // namespace towerlab
