#pragma once

#include <ostream>
#include <string>

#include "json.hpp"

namespace pmil {

// Line-delimited structured records with stable field names. Keys keep
// insertion order so repeated runs emit byte-identical metric fields.
using Json = nlohmann::ordered_json;

inline void append_record(std::ostream& os, const Json& record) {
  os << record.dump() << "\n";
}

std::string hex_u64(std::uint64_t v);

}  // namespace pmil
