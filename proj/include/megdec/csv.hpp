#pragma once

#include <string>
#include <vector>

namespace megdec {

/// Minimal CSV support: comma separator, optional double-quote quoting with
/// "" escapes. Enough for manifests, logs and reports.
std::vector<std::string> csv_split_line(const std::string& line);
std::string csv_field(const std::string& value);
std::string csv_join(const std::vector<std::string>& fields);

std::vector<std::vector<std::string>> read_csv(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace megdec
