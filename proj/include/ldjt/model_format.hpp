#pragma once

// Text format for static and dynamic models.
//
//   # comment
//   domain X = {x1, x2, x3}
//   prv User(X) : {true, false}
//   parfactor g0 (Attack1, User(X)) | X in {x1, x2} {
//     (true, true) = 1.5; (true, false) = 0.5; ...
//   }
//
// Dynamic documents split parfactors into sections `[g0]` and `[g->]`.
// Atoms take an optional time suffix: `@0` in [g0], `@t` / `@t-1` in [g->],
// `@<n>` for absolute steps in static documents. Unsuffixed atoms refer to
// slice t (or step 0).

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "ldjt/model.hpp"

namespace ldjt {

using AnyModel = std::variant<Model, DynamicModel>;

/// Throws ParseError (with line and column) or ModelError.
AnyModel parse_model(std::string_view text);
Model parse_static_model(std::string_view text);
DynamicModel parse_dynamic_model(std::string_view text);
AnyModel load_model(const std::filesystem::path& path);

std::string print_model(const Model& m);
std::string print_model(const DynamicModel& d);

}  // namespace ldjt
