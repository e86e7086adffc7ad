#pragma once

#include <string>
#include <vector>

#include "dasd/trainer.hpp"

namespace dasd {

// Minimal self-contained SVG line chart of the per-step loss components.
std::string render_loss_curve_svg(const std::vector<StepRecord>& trace);

std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace dasd
