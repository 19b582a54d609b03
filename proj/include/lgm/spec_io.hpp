#pragma once

#include "lgm/model_spec.hpp"
#include "lgm/sparse.hpp"

#include <string>
#include <utility>
#include <vector>

namespace lgm {

struct DataColumn {
    std::string name;
    bool numeric = true;
    /// Numeric cells; NaN marks a missing response.
    std::vector<double> values;
    std::vector<std::string> text;
};

class DataTable {
public:
    DataTable() = default;
    explicit DataTable(int n_rows) : n_rows_(n_rows) {}

    int n_rows() const { return n_rows_; }
    const std::vector<DataColumn>& columns() const { return columns_; }
    const DataColumn* find(const std::string& name) const;
    bool has(const std::string& name) const { return find(name) != nullptr; }
    /// Throws ValidationError unless `name` is an existing numeric column.
    const std::vector<double>& numeric(const std::string& name) const;

    void add_numeric(std::string name, std::vector<double> values);
    void add_text(std::string name, std::vector<std::string> values);

private:
    int n_rows_ = 0;
    std::vector<DataColumn> columns_;
};

/// RFC-4180 records (quoted fields, doubled quotes, CRLF or LF line ends).
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

/// Empty cells and "NA" are missing; they are accepted only in `response_column`.
/// A column is text when its first non-missing cell is not a number.
DataTable parse_table(const std::string& text, const std::string& response_column = "",
                      const std::string& source = "data");
DataTable load_table(const std::string& path, const std::string& response_column = "");

/// Relative file paths inside the document are resolved against `base_dir`.
ModelSpec parse_model_spec(const std::string& text, const std::string& base_dir = "");
ModelSpec load_model_spec(const std::string& path);
std::string serialize_model_spec(const ModelSpec& spec);

/// Reads 1-based "i,j,x" triplets; a non-numeric first line is taken as a header.
MatrixInput read_matrix_triplets(const std::string& path, int nrow = 0, int ncol = 0);
SpMat to_sparse(const MatrixInput& m);
SparseSym to_sparse_sym(const MatrixInput& m);

struct LatentBlock {
    std::string name;
    LatentKind kind = LatentKind::iid;
    int offset = 0;
    int length = 0;
    /// Number of levels (half the block for bym/bym2).
    int m = 0;
};

/// x = (beta, u_1, ..., u_K), contiguous blocks in declaration order.
struct LatentLayout {
    int n = 0;
    int beta_offset = 0;
    int beta_length = 0;
    std::vector<std::string> beta_names;
    std::vector<LatentBlock> blocks;

    /// (offset, length) for a fixed-effect name or component id; "x"/"beta" select all fixed
    /// effects unless a term has that name. {-1, 0} if unknown.
    std::pair<int, int> range(const std::string& name) const;
};

struct DesignMatrices {
    Matrix X;
    std::vector<SpMat> component;
    SpMat A;
};

/// Number of levels of a component: explicit n, graph size, Q size, A.local columns,
/// or the largest index in the id column.
int component_levels(const RandomComponent& c, const DataTable& data);

/// Checks the spec against the columns of `data` (names, numeric types, aux vectors).
void validate_against_data(const ModelSpec& spec, const DataTable& data);

std::pair<LatentLayout, DesignMatrices> build_layout_and_design(const ModelSpec& spec, const DataTable& data);

/// Display name of a fixed term: "(Intercept)" for "1".
std::string fixed_term_name(const std::string& term);

}  // namespace lgm
