#pragma once

#include "pfbr/io.hpp"

#include <iosfwd>
#include <string>

namespace pfbr::cli {

// Command bodies behind the argv front end; they throw pfbr::Error, which the
// entry point maps to exit codes (0 ok, 2 config, 3 data, 4 numerical).

void cmd_dump_defaults(std::ostream& out);

void cmd_generate_tasks(const io::RunConfig& cfg, const std::string& out_path);

void cmd_train(const io::RunConfig& cfg, const std::string& tasks_path,
               const std::string& ckpt_path, const std::string& history_path);

void cmd_infer(const io::RunConfig& cfg, const std::string& ckpt_path,
               const std::string& tasks_path, int task_index, const std::string& out_path);

void cmd_eval(const io::RunConfig& cfg, const std::string& ensembles_path,
              const std::string& tasks_path, int task_index, const std::string& reference_path,
              const std::string& out_csv);

void cmd_baselines(const io::RunConfig& cfg, const std::string& tasks_path, int task_index,
                   const std::string& algo, const std::string& out_csv,
                   const std::string& out_ensembles);

}  // namespace pfbr::cli
