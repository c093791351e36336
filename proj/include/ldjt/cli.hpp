#pragma once

// Command-line driver: `run`, `verify` and `bench`.

#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "ldjt/temporal.hpp"

namespace ldjt::cli {

enum Exit { ok = 0, usage = 1, parse = 2, verification = 3, inference = 4 };

/// Schedule CSV: `step,kind,term,value` with kind `evidence` (value is a
/// range value) or `query` (value is a lag; negative lags predict). Terms
/// may contain commas inside parentheses or be double-quoted. A header row
/// is optional. Throws ParseError.
Schedule parse_schedule(std::string_view text, const Vocabulary& vocab);
Schedule load_schedule(const std::filesystem::path& path, const Vocabulary& vocab);
/// Adds `more` into `into`; last_step becomes the larger of the two.
void merge(Schedule& into, const Schedule& more);

/// One CSV row per answer: step,target,lag,kind,term,clamped,distribution.
void write_report(std::ostream& out, std::span<const Answer> answers, const Vocabulary& vocab);

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ldjt::cli
