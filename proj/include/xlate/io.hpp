#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace xlate {

std::string read_text(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

/// Keeps large freed blocks in the heap instead of returning them to the OS;
/// training frees and reallocates the same tensor sizes every step.
void retain_freed_memory();

}  // namespace xlate
