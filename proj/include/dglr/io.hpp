// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/training.hpp"

#include <filesystem>

namespace dglr {

inline constexpr const char* kCheckpointVersion = "dglr-ckpt-1";

/// Self-describing JSON: dims, every tensor row-major, the graph sequence,
/// feature normalization and the seed.
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

/// `epoch,stsm,gc,fs,ts,total`, one row per epoch.
void write_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);

/// Long format `time,location_id,prediction` for steps [begin, end); NaN cells are skipped.
void write_predictions(const Matrix& predictions, Index begin, Index end,
                       const std::filesystem::path& path);
/// Reads the long format back into a steps×N matrix, NaN where absent.
Matrix read_predictions(const std::filesystem::path& path, Index steps, Index nodes);

/// `time,location_id,actual,predicted`; actual is empty where unlabeled.
void write_plot_data(const Matrix& predictions, const Matrix& labels, const Mask& mask,
                     const std::filesystem::path& path);

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dglr
