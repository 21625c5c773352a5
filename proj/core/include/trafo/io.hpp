#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trafo/forest.hpp"

namespace trafo {

struct TableOptions {
  char delimiter = ',';
  std::vector<std::string> categorical;
  std::vector<std::string> ordinal;
};

/// Reads a learning sample. The response is `y` (exact) or `y_left`/`y_right`
/// (censored, empty field = infinite bound), optionally truncated by
/// `t_left`/`t_right`; every other column is a predictor. Categorical levels
/// are coded in lexicographic order.
Dataset read_dataset(std::istream& in, const TableOptions& options = {});

/// New data laid out per a fitted model's predictor schema. Extra columns are
/// ignored; a missing predictor column raises SchemaError.
struct PredictionTable {
  Eigen::MatrixXd x;
  std::optional<std::vector<Response>> responses;
};

PredictionTable read_prediction_table(std::istream& in, const std::vector<Column>& schema,
                                      char delimiter = ',');

/// Writes predictors plus response columns in the format read_dataset accepts.
void write_dataset(std::ostream& out, const Dataset& data, char delimiter = ',');

enum class ModelKind { Tree, Forest };

/// A persisted fit. Trees are stored as a one-tree forest grown on all rows.
struct ModelDocument {
  static constexpr int kFormatVersion = 1;
  ModelKind kind = ModelKind::Forest;
  Forest forest;
};

std::string serialize_model(const ModelDocument& doc);
ModelDocument parse_model(const std::string& text);

}  // namespace trafo
