#pragma once

// Binary checkpoints: a JSON header followed by float64 payloads, grouped as
// "backbone", "expert:<tag>" and "gate", each with a content hash.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xlate/model.hpp"

namespace xlate {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LoraSettings& s);
void from_json(const nlohmann::json& j, LoraSettings& s);

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

/// Weight groups in canonical order: backbone, experts in slot order, gate.
template <typename Scalar>
std::vector<std::pair<std::string, NamedTensors<Scalar>>> weight_groups(const Model<Scalar>& model);

/// FNV-1a over names, shapes and float64 images of the values.
template <typename Scalar>
std::string group_hash(const NamedTensors<Scalar>& tensors);

/// Group name -> hash.
template <typename Scalar>
std::map<std::string, std::string> group_hashes(const Model<Scalar>& model);

/// Deep copy; the result shares no storage with `model`.
template <typename Scalar>
Model<Scalar> clone_model(const Model<Scalar>& model);

/// Written to a temporary file and renamed into place. `meta` is stored verbatim.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Model<Scalar>& model, const nlohmann::json& meta = {});

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

/// Header only (config, groups, hashes, meta) without reading payloads.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

struct AuditEntry {
  std::string group;
  bool changed = false;
  bool expected_change = false;
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  bool ok() const;
  std::vector<std::string> changed_groups() const;
  std::string summary() const;
  nlohmann::json to_json() const;
};

/// Compares per-group hashes. Groups present on one side only are an
/// architecture mismatch (ContractError).
AuditReport audit_frozen(const std::map<std::string, std::string>& before, const std::map<std::string, std::string>& after,
                         const std::set<std::string>& expected_changed);

}  // namespace xlate
