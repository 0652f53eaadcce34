#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "urbanpulse/mobility/io.hpp"
#include "urbanpulse/transfer/evaluate.hpp"
#include "urbanpulse/transfer/trainer.hpp"

// Versioned CSV tables: a "# urbanpulse-csv v1 <kind>" line, then a fixed header.
namespace urbanpulse::transfer {

inline constexpr const char* kStepHeader = "step,loss";
inline constexpr const char* kEpochHeader = "epoch,train_loss,val_loss";
inline constexpr const char* kOutcomeHeader = "t,correct,over,under";

using Table = std::vector<std::vector<double>>;

inline void write_table(const std::filesystem::path& path, const std::string& kind, const std::string& header,
                        const Table& rows) {
  using mobility::io_detail::fmt;
  auto out = mobility::io_detail::open_out(path);
  out << "# urbanpulse-csv v1 " << kind << '\n' << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << fmt(row[i]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline Table read_table(const std::filesystem::path& path, const std::string& header) {
  auto in = mobility::io_detail::open_in(path);
  mobility::io_detail::expect_header(in, header, path);
  const std::size_t cols = mobility::io_detail::split(header).size();
  Table rows;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (mobility::io_detail::trim(line).empty() || line[0] == '#') continue;
    const auto fields = mobility::io_detail::split(line);
    if (fields.size() != cols) throw mobility::FormatError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    std::vector<double> row(cols);
    for (std::size_t i = 0; i < cols; ++i)
      if (!mobility::io_detail::parse(fields[i], row[i]))
        throw mobility::FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_step_curve(const std::filesystem::path& path, const std::vector<double>& losses) {
  Table rows;
  for (std::size_t i = 0; i < losses.size(); ++i) rows.push_back({static_cast<double>(i + 1), losses[i]});
  write_table(path, "step_loss", kStepHeader, rows);
}

inline void write_epoch_curve(const std::filesystem::path& path, const std::vector<EpochRecord>& epochs) {
  Table rows;
  for (const auto& e : epochs) rows.push_back({static_cast<double>(e.epoch), e.train_loss, e.val_loss});
  write_table(path, "epoch_loss", kEpochHeader, rows);
}

inline void write_outcomes(const std::filesystem::path& path, const EvalReport& report) {
  Table rows;
  for (const auto& [t, c] : report.per_step)
    rows.push_back({static_cast<double>(t), static_cast<double>(c.correct), static_cast<double>(c.over),
                    static_cast<double>(c.under)});
  write_table(path, "edge_outcomes", kOutcomeHeader, rows);
}

}  // namespace urbanpulse::transfer
