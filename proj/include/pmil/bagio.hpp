#pragma once

#include <string>

#include "pmil/synth.hpp"

namespace pmil {

// Bag container: magic "PMBG", u16 version, header (n, H, W, C, label,
// bag_id), little-endian f32 instance data, then an optional "LTNT" sidecar
// with the oracle-only instance latents.
void write_bag(const Bag& bag, const std::string& path);
Bag read_bag(const std::string& path);

// Writes bags/<split>_<index>.pmbg plus a plain-text manifest mapping each
// bag file to its split.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::string read_text_file(const std::string& path);

}  // namespace pmil
