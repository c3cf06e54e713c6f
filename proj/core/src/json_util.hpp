// SPDX-License-Identifier: Apache-2.0
// Internal helper: keeps the vendored JSON dependency out of public headers.
#ifndef NFBEAM_SRC_JSON_UTIL_HPP
#define NFBEAM_SRC_JSON_UTIL_HPP

#include <string>

#include "json.hpp"
#include "nfbeam/common.hpp"

namespace nfbeam {

using json = nlohmann::json;

inline json parse_json(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded())
    throw IoError(std::string("malformed JSON while reading ") + what);
  return j;
}

}  // namespace nfbeam

#endif  // NFBEAM_SRC_JSON_UTIL_HPP
