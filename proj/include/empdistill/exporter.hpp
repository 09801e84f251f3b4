#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "empdistill/partitioner.hpp"

namespace empdistill {

// Dataset files are JSON lines: a header record
// {"schema": "empdistill/<kind>", "schema_version": 1, "count": N}, then one
// record per example. SFT records are {instruction, input, output, meta};
// preference records are {instruction, input, chosen, rejected, meta}; test
// records are {id, situation, utterance}.
inline constexpr int kDatasetSchemaVersion = 1;

// `instruction` is the Direct template body.
std::string serialize_sft(const std::vector<SftExample>& examples, const std::string& instruction);
std::string serialize_preference(const std::vector<PreferencePair>& pairs,
                                 const std::string& instruction);
std::string serialize_test(const std::vector<DialogueContext>& contexts);

// Write the file atomically and return the record count. Empty input throws
// ValidationError("empty dataset"); write failures throw IoError.
std::size_t export_sft(const std::vector<SftExample>& examples, const std::string& instruction,
                       const std::filesystem::path& path);
std::size_t export_preference(const std::vector<PreferencePair>& pairs,
                              const std::string& instruction, const std::filesystem::path& path);
std::size_t export_test(const std::vector<DialogueContext>& contexts,
                        const std::filesystem::path& path);

std::vector<SftExample> parse_sft(std::string_view text, const std::string& source = "<sft>");
std::vector<PreferencePair> parse_preference(std::string_view text,
                                             const std::string& source = "<dpo>");
std::vector<DialogueContext> parse_test(std::string_view text,
                                        const std::string& source = "<test>");

std::vector<SftExample> load_sft(const std::filesystem::path& path);
std::vector<PreferencePair> load_preference(const std::filesystem::path& path);
std::vector<DialogueContext> load_test(const std::filesystem::path& path);

enum class TrainingStage { Sft, Dpo };

const char* to_string(TrainingStage stage);

// Hyperparameters handed to an external LoRA trainer.
struct TrainingConfig {
  TrainingStage stage = TrainingStage::Sft;
  std::string finetuning_method = "lora";
  int lora_rank = 8;
  double learning_rate = 5e-5;
  double epochs = 3.0;
  std::string compute_type = "bf16";
  int batch_size = 2;
  // Dpo only.
  std::optional<double> dpo_beta;
  std::optional<std::string> dpo_loss;
  std::string dataset_path;
  std::string base_model;
  // Keys changed from their defaults, in the order applied.
  std::vector<std::string> overridden;

  static TrainingConfig defaults(TrainingStage stage);

  // Accepts lora_rank, learning_rate, epochs, compute_type, batch_size,
  // finetuning_method, and for Dpo dpo_beta and dpo_loss. Throws
  // ValidationError on unknown keys or malformed values.
  void apply_override(const std::string& key, const std::string& value);

  bool operator==(const TrainingConfig&) const = default;
};

// "key: value" lines; overridden keys are followed by a "# overridden" line.
std::string serialize_training_config(const TrainingConfig& config);
TrainingConfig parse_training_config(std::string_view text, const std::string& source = "<cfg>");

// Throws IoError when `dataset_path` does not exist. Each override is logged.
TrainingConfig emit_training_config(TrainingStage stage, const std::filesystem::path& dataset_path,
                                    const std::string& base_model,
                                    const std::filesystem::path& path,
                                    const std::map<std::string, std::string>& overrides = {});

}  // namespace empdistill
