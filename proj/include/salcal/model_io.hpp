#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "salcal/model.hpp"

namespace salcal {

// Model file layout (all integers little-endian):
//   "CTIM"  u16 version (= 1)  u32 header length  header (UTF-8 JSON)
//   f32 weight blobs in the order the header lists them.
inline constexpr char kModelMagic[4] = {'C', 'T', 'I', 'M'};
inline constexpr std::uint16_t kModelVersion = 1;

std::vector<unsigned char> serialize_model(const ClassifierModel& model);
ClassifierModel deserialize_model(const std::vector<unsigned char>& bytes);

void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temporary then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace salcal
