#ifndef BILIP_SERIALIZE_HPP
#define BILIP_SERIALIZE_HPP

#include "bilip/blnn.hpp"
#include "bilip/estimator.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace bilip {

// Decimal with 17 significant digits: enough to reproduce any double exactly.
std::string format_double(double v);

// Versioned parameter document {version, activation, dims, layers:[...]},
// numeric arrays row-major, every float written with 17 significant digits.
std::string icnn_to_json(const IcnnParams& p);
IcnnParams icnn_from_json(const std::string& text);

// Model bundle {config:{alpha,beta,weighted?}, core:<parameter doc>, solver_defaults}.
std::string blnn_to_json(const Blnn& model, const SolverConfig& solver_defaults);
struct BlnnBundle {
  Blnn model;
  SolverConfig solver_defaults;
};
BlnnBundle blnn_from_json(const std::string& text);

std::string estimate_to_json(const BiLipEstimate& est);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// RFC-4180 rows (CRLF line ends); numeric cells use the 17-digit format.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}
  void header(const std::vector<std::string>& names);
  void row(const std::vector<double>& values);
  void row_mixed(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
};

}  // namespace bilip

#endif
