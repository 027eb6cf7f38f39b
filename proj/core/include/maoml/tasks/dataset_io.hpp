#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "maoml/tasks/synth.hpp"

namespace maoml::tasks {

// On-disk layout of a task collection:
//   <root>/manifest.csv  task_id,class_index,class_name,split,sample_index,byte_offset,length
//   <root>/tensors.bin   concatenated little-endian f64 images; length is in bytes
//   <root>/tasks.json    the TaskSpec of every task (directions included)

void save_dataset(const std::filesystem::path& root, std::span<const TaskDataset> tasks);

/// All-or-nothing: malformed input throws ParseError (with the byte offset
/// in the offending file) and no partial collection is returned.
std::vector<TaskDataset> load_dataset(const std::filesystem::path& root);

}  // namespace maoml::tasks
