#include "lgm/spec_io.hpp"

#include "lgm/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

namespace lgm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path, const char* what) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError(path, std::string("cannot open ") + what);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& raw, double& out) {
    const std::string s = trim(raw);
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_missing(const std::string& raw) {
    const std::string s = trim(raw);
    return s.empty() || s == "NA";
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_relative() && !base_dir.empty()) path = fs::path(base_dir) / path;
    if (path.is_relative()) path = fs::absolute(path);
    return path.lexically_normal().string();
}

// ---- typed JSON access with key paths

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ValidationError(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ValidationError(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
    }
}

std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ValidationError(path, "expected a string");
    return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) throw ValidationError(path, "expected true or false");
    return j.get<bool>();
}

double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ValidationError(path, "expected a number");
    return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ValidationError(path, "expected an integer");
    return j.get<int>();
}

std::vector<double> as_number_list(const json& j, const std::string& path) {
    if (j.is_number()) return {j.get<double>()};
    if (!j.is_array()) throw ValidationError(path, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t k = 0; k < j.size(); ++k) out.push_back(as_number(j[k], path + "[" + std::to_string(k) + "]"));
    return out;
}

/// Lookup accepting alternative spellings; throws if more than one is present.
const json* find_alias(const json& j, const std::string& path, std::initializer_list<const char*> names) {
    const json* hit = nullptr;
    for (const char* n : names) {
        auto it = j.find(n);
        if (it != j.end()) {
            if (hit) throw ValidationError(sub(path, n), "duplicate of an equivalent key");
            hit = &*it;
        }
    }
    return hit;
}

// ---- hyperparameter slots

struct SlotAlias {
    const char* alias;
    const char* slot;
};

std::string canonical_slot(LatentKind kind, const std::string& name, const std::string& path) {
    static const std::vector<SlotAlias> single = {{"prec", "prec"}, {"theta", "prec"}, {"theta1", "prec"}};
    static const std::vector<SlotAlias> ar1 = {{"prec", "prec"}, {"theta1", "prec"}, {"rho", "rho"}, {"theta2", "rho"}};
    static const std::vector<SlotAlias> bym = {{"theta1", "theta1"},
                                               {"prec.unstruct", "theta1"},
                                               {"theta2", "theta2"},
                                               {"prec.spatial", "theta2"}};
    static const std::vector<SlotAlias> bym2 = {{"prec", "prec"}, {"theta1", "prec"}, {"phi", "phi"}, {"theta2", "phi"}};
    const std::vector<SlotAlias>* table = &single;
    if (kind == LatentKind::ar1) table = &ar1;
    if (kind == LatentKind::bym) table = &bym;
    if (kind == LatentKind::bym2) table = &bym2;
    for (const auto& a : *table)
        if (name == a.alias) return a.slot;
    throw ValidationError(path, "unknown hyperparameter '" + name + "' for model " + latent_name(kind));
}

void parse_table_string(const std::string& s, PriorSpec& p, const std::string& path) {
    std::istringstream in(s.substr(s.find(':') + 1));
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        double d;
        if (!parse_number(tok, d)) throw ValidationError(path, "non-numeric entry in table prior");
        v.push_back(d);
    }
    if (v.size() % 2 != 0) throw ValidationError(path, "table prior needs equal numbers of abscissae and values");
    const std::size_t half = v.size() / 2;
    p.table_x.assign(v.begin(), v.begin() + half);
    p.table_logd.assign(v.begin() + half, v.end());
}

PriorSpec parse_hyper_entry(const json& j, const std::string& path, PriorSpec base, Transform transform) {
    check_keys(j, path, {"prior", "param", "initial", "fixed", "table"});
    PriorSpec p = std::move(base);
    if (auto it = j.find("prior"); it != j.end()) {
        const std::string name = as_string(*it, sub(path, "prior"));
        const PriorKind kind = parse_prior_name(name, sub(path, "prior"));
        if (kind != p.kind) {
            p.kind = kind;
            p.params.clear();
            p.table_x.clear();
            p.table_logd.clear();
            // defaults for parameters that are not supplied
            switch (kind) {
                case PriorKind::pc_prec: p.params = {1.0, 0.01}; break;
                case PriorKind::pc_cor1: p.params = {0.9, 0.9}; break;
                case PriorKind::pc_cor0: p.params = {0.5, 0.5}; break;
                case PriorKind::pc: p.params = {0.5, 0.5}; break;
                case PriorKind::loggamma: p.params = {1.0, 5e-5}; break;
                case PriorKind::gaussian: p.params = {0.0, 0.001}; break;
                default: break;
            }
        }
        if (kind == PriorKind::table && name.find(':') != std::string::npos)
            parse_table_string(name, p, sub(path, "prior"));
    }
    if (auto it = j.find("param"); it != j.end()) p.params = as_number_list(*it, sub(path, "param"));
    if (auto it = j.find("table"); it != j.end()) {
        const std::string tp = sub(path, "table");
        if (p.kind != PriorKind::table) throw ValidationError(tp, "'table' requires prior \"table\"");
        if (!it->is_array()) throw ValidationError(tp, "expected a list of [theta, log-density] pairs");
        p.table_x.clear();
        p.table_logd.clear();
        for (std::size_t k = 0; k < it->size(); ++k) {
            const auto pair = as_number_list((*it)[k], tp + "[" + std::to_string(k) + "]");
            if (pair.size() != 2) throw ValidationError(tp + "[" + std::to_string(k) + "]", "expected a pair");
            p.table_x.push_back(pair[0]);
            p.table_logd.push_back(pair[1]);
        }
    }
    if (p.kind == PriorKind::table && !p.params.empty()) throw ValidationError(sub(path, "param"), "table prior takes no param");
    if (auto it = j.find("initial"); it != j.end()) p.initial = as_number(*it, sub(path, "initial"));
    if (auto it = j.find("fixed"); it != j.end()) p.fixed = as_bool(*it, sub(path, "fixed"));
    if (p.fixed && !p.initial) throw ValidationError(sub(path, "fixed"), "a fixed hyperparameter needs 'initial'");
    // validate parameters now so errors carry the key path
    try {
        if (p.kind == PriorKind::pc) {
            if (p.params.size() != 2 || !(p.params[0] > 0 && p.params[0] < 1) || !(p.params[1] > 0 && p.params[1] < 1))
                throw ValidationError("", "pc requires U in (0,1) and alpha in (0,1)");
            if (transform != Transform::logit) throw ValidationError("", "pc applies only to a mixing weight");
        } else {
            HyperPrior check(p, transform);
        }
    } catch (const ValidationError& e) {
        throw ValidationError(path, e.what());
    }
    return p;
}

json prior_to_json(const PriorSpec& p) {
    json j;
    j["prior"] = prior_name(p.kind);
    if (p.kind == PriorKind::table) {
        json t = json::array();
        for (std::size_t k = 0; k < p.table_x.size(); ++k) t.push_back({p.table_x[k], p.table_logd[k]});
        j["table"] = t;
    } else {
        j["param"] = p.params;
    }
    if (p.initial) j["initial"] = *p.initial;
    if (p.fixed) j["fixed"] = true;
    return j;
}

MatrixInput parse_matrix(const json& j, const std::string& path, const std::string& base_dir) {
    if (j.is_string()) return read_matrix_triplets(resolve_path(j.get<std::string>(), base_dir));
    check_keys(j, path, {"nrow", "ncol", "n", "entries", "path"});
    int nrow = 0, ncol = 0;
    if (auto it = j.find("n"); it != j.end()) nrow = ncol = as_int(*it, sub(path, "n"));
    if (auto it = j.find("nrow"); it != j.end()) nrow = as_int(*it, sub(path, "nrow"));
    if (auto it = j.find("ncol"); it != j.end()) ncol = as_int(*it, sub(path, "ncol"));
    if (auto it = j.find("path"); it != j.end()) {
        if (j.contains("entries")) throw ValidationError(path, "give either 'path' or 'entries'");
        return read_matrix_triplets(resolve_path(as_string(*it, sub(path, "path")), base_dir), nrow, ncol);
    }
    MatrixInput m;
    m.nrow = nrow;
    m.ncol = ncol;
    auto it = j.find("entries");
    if (it == j.end() || !it->is_array()) throw ValidationError(sub(path, "entries"), "expected a list of [i, j, x]");
    for (std::size_t k = 0; k < it->size(); ++k) {
        const std::string ep = sub(path, "entries") + "[" + std::to_string(k) + "]";
        const auto& e = (*it)[k];
        if (!e.is_array() || e.size() != 3) throw ValidationError(ep, "expected [i, j, x]");
        const int r = as_int(e[0], ep), c = as_int(e[1], ep);
        const double v = as_number(e[2], ep);
        if (r < 1 || c < 1) throw ValidationError(ep, "indices are 1-based");
        m.entries.emplace_back(r - 1, c - 1, v);
        m.nrow = std::max(m.nrow, r);
        m.ncol = std::max(m.ncol, c);
    }
    if (nrow && m.nrow > nrow) throw ValidationError(path, "row index exceeds nrow");
    if (ncol && m.ncol > ncol) throw ValidationError(path, "column index exceeds ncol");
    return m;
}

json matrix_to_json(const MatrixInput& m) {
    json j;
    if (!m.path.empty()) {
        j["path"] = m.path;
        j["nrow"] = m.nrow;
        j["ncol"] = m.ncol;
        return j;
    }
    j["nrow"] = m.nrow;
    j["ncol"] = m.ncol;
    json e = json::array();
    for (const auto& [r, c, v] : m.entries) e.push_back({r + 1, c + 1, v});
    j["entries"] = e;
    return j;
}

AuxInput parse_aux(const json& j, const std::string& path) {
    AuxInput a;
    if (j.is_string())
        a.column = j.get<std::string>();
    else
        a.values = as_number_list(j, path);
    return a;
}

json aux_to_json(const AuxInput& a) {
    if (!a.column.empty()) return a.column;
    return a.values;
}

LatentKind parse_latent_name(const std::string& name, const std::string& path) {
    for (auto k : {LatentKind::iid, LatentKind::rw1, LatentKind::rw2, LatentKind::ar1, LatentKind::bym, LatentKind::bym2,
                   LatentKind::generic0})
        if (name == latent_name(k)) return k;
    if (name == "generic") return LatentKind::generic0;
    throw ValidationError(path, "unknown latent model '" + name + "'");
}

std::map<std::string, PriorSpec> parse_hyper_block(const json* j, const std::string& path,
                                                  const std::vector<std::string>& slots,
                                                  const std::function<std::string(const std::string&, const std::string&)>& canon,
                                                  const std::function<PriorSpec(const std::string&)>& defaults,
                                                  const std::function<Transform(const std::string&)>& transform) {
    std::map<std::string, PriorSpec> out;
    for (const auto& s : slots) out[s] = defaults(s);
    if (!j) return out;
    if (!j->is_object()) throw ValidationError(path, "expected an object");
    std::set<std::string> seen;
    for (auto it = j->begin(); it != j->end(); ++it) {
        const std::string kp = sub(path, it.key());
        const std::string slot = canon(it.key(), kp);
        if (!seen.insert(slot).second) throw ValidationError(kp, "hyperparameter given twice");
        out[slot] = parse_hyper_entry(*it, kp, out[slot], transform(slot));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// slots and defaults

std::vector<std::string> hyper_slots(LatentKind kind) {
    switch (kind) {
        case LatentKind::ar1: return {"prec", "rho"};
        case LatentKind::bym: return {"theta1", "theta2"};
        case LatentKind::bym2: return {"prec", "phi"};
        default: return {"prec"};
    }
}

std::string family_hyper_slot(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::gaussian:
        case FamilyKind::gamma:
        case FamilyKind::beta: return "prec";
        case FamilyKind::nbinomial: return "size";
        default: return "";
    }
}

Transform slot_transform(LatentKind kind, const std::string& slot) {
    if (kind == LatentKind::ar1 && slot == "rho") return Transform::fisher_correlation;
    if (kind == LatentKind::bym2 && slot == "phi") return Transform::logit;
    return Transform::log_precision;
}

Transform family_slot_transform(FamilyKind kind) {
    return kind == FamilyKind::gaussian ? Transform::log_precision : Transform::log;
}

PriorSpec default_prior(LatentKind kind, const std::string& slot) {
    PriorSpec p;
    if (kind == LatentKind::ar1 && slot == "rho") {
        p.kind = PriorKind::pc_cor1;
        p.params = {0.9, 0.9};
    } else if (kind == LatentKind::bym2 && slot == "phi") {
        p.kind = PriorKind::pc;
        p.params = {0.5, 0.5};
    } else {
        p.kind = PriorKind::pc_prec;
        p.params = {1.0, 0.01};
    }
    return p;
}

PriorSpec default_family_prior(FamilyKind kind) {
    PriorSpec p;
    if (kind == FamilyKind::gaussian) {
        p.kind = PriorKind::pc_prec;
        p.params = {1.0, 0.01};
    } else {
        p.kind = PriorKind::loggamma;
        p.params = {1.0, 0.01};
    }
    return p;
}

// ---------------------------------------------------------------------------
// DataTable

const DataColumn* DataTable::find(const std::string& name) const {
    for (const auto& c : columns_)
        if (c.name == name) return &c;
    return nullptr;
}

const std::vector<double>& DataTable::numeric(const std::string& name) const {
    const DataColumn* c = find(name);
    if (!c) throw ValidationError(name, "no such column in the data");
    if (!c->numeric) throw ValidationError(name, "column is not numeric");
    return c->values;
}

void DataTable::add_numeric(std::string name, std::vector<double> values) {
    if (static_cast<int>(values.size()) != n_rows_) throw std::invalid_argument("add_numeric: length mismatch");
    if (has(name)) throw std::invalid_argument("add_numeric: duplicate column " + name);
    columns_.push_back({std::move(name), true, std::move(values), {}});
}

void DataTable::add_text(std::string name, std::vector<std::string> values) {
    if (static_cast<int>(values.size()) != n_rows_) throw std::invalid_argument("add_text: length mismatch");
    if (has(name)) throw std::invalid_argument("add_text: duplicate column " + name);
    columns_.push_back({std::move(name), false, {}, std::move(values)});
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false, field_started = false;
    const std::size_t n = text.size();
    std::size_t i = 0;
    if (n >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;  // UTF-8 BOM
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };
    for (; i < n; ++i) {
        const char ch = text[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (ch == ',') {
            end_field();
        } else if (ch == '\r') {
            if (i + 1 < n && text[i + 1] == '\n') ++i;
            end_row();
        } else if (ch == '\n') {
            end_row();
        } else {
            field.push_back(ch);
            field_started = true;
        }
    }
    if (in_quotes) throw ValidationError("csv", "unterminated quoted field");
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

DataTable parse_table(const std::string& text, const std::string& response_column, const std::string& source) {
    const auto rows = parse_csv(text);
    if (rows.empty()) throw ValidationError(source, "missing header row");
    const auto& header = rows[0];
    const std::size_t ncol = header.size();
    std::set<std::string> names;
    for (const auto& h : header) {
        if (trim(h).empty()) throw ValidationError(source, "empty column name in header");
        if (!names.insert(trim(h)).second) throw ValidationError(source, "duplicate column '" + trim(h) + "'");
    }
    for (std::size_t r = 1; r < rows.size(); ++r)
        if (rows[r].size() != ncol)
            throw ValidationError(source + ":" + std::to_string(r + 1),
                                  "ragged row: " + std::to_string(rows[r].size()) + " fields, header has " +
                                      std::to_string(ncol));
    const int n = static_cast<int>(rows.size()) - 1;
    DataTable table(n);
    for (std::size_t c = 0; c < ncol; ++c) {
        const std::string name = trim(header[c]);
        const bool is_response = name == response_column;
        bool numeric = true;
        for (int r = 0; r < n; ++r) {
            const auto& cell = rows[r + 1][c];
            if (is_missing(cell)) continue;
            double d;
            numeric = parse_number(cell, d);
            break;
        }
        if (numeric) {
            std::vector<double> v(static_cast<std::size_t>(n));
            for (int r = 0; r < n; ++r) {
                const auto& cell = rows[r + 1][c];
                const std::string where = source + ":" + std::to_string(r + 2) + " column '" + name + "'";
                if (is_missing(cell)) {
                    if (!is_response) throw ValidationError(where, "missing value outside the response column");
                    v[r] = std::numeric_limits<double>::quiet_NaN();
                } else if (!parse_number(cell, v[r])) {
                    throw ValidationError(where, "non-numeric cell '" + cell + "' in numeric column");
                }
            }
            table.add_numeric(name, std::move(v));
        } else {
            std::vector<std::string> v(static_cast<std::size_t>(n));
            for (int r = 0; r < n; ++r) {
                const auto& cell = rows[r + 1][c];
                if (is_missing(cell) && !is_response)
                    throw ValidationError(source + ":" + std::to_string(r + 2) + " column '" + name + "'",
                                          "missing value outside the response column");
                v[r] = cell;
            }
            table.add_text(name, std::move(v));
        }
    }
    return table;
}

DataTable load_table(const std::string& path, const std::string& response_column) {
    return parse_table(read_file(path, "data file"), response_column, path);
}

// ---------------------------------------------------------------------------
// model document

ModelSpec parse_model_spec(const std::string& text, const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError("model", std::string("malformed JSON: ") + e.what());
    }
    check_keys(doc, "", {"response", "fixed", "random", "family", "link", "E", "Ntrials", "control", "safe"});
    ModelSpec spec;
    auto it = doc.find("response");
    if (it == doc.end()) throw ValidationError("response", "required key missing");
    spec.response = as_string(*it, "response");
    if (spec.response.empty()) throw ValidationError("response", "empty column name");

    if (auto f = doc.find("fixed"); f != doc.end()) {
        if (!f->is_array()) throw ValidationError("fixed", "expected a list of term names");
        std::set<std::string> seen;
        for (std::size_t k = 0; k < f->size(); ++k) {
            const std::string p = "fixed[" + std::to_string(k) + "]";
            const std::string term = as_string((*f)[k], p);
            if (!seen.insert(term).second) throw ValidationError(p, "duplicate fixed term '" + term + "'");
            spec.fixed.push_back(term);
        }
    }
    if (auto f = doc.find("family"); f != doc.end()) spec.family = parse_family_name(as_string(*f, "family"), "family");
    if (auto f = doc.find("link"); f != doc.end()) {
        const std::string l = as_string(*f, "link");
        if (l != "default" && l != link_name(default_link(spec.family)))
            throw ValidationError("link", "only the default link (" + std::string(link_name(default_link(spec.family))) +
                                              ") is supported for " + family_name(spec.family));
    }
    if (auto f = doc.find("E"); f != doc.end()) spec.E = parse_aux(*f, "E");
    if (auto f = doc.find("Ntrials"); f != doc.end()) spec.Ntrials = parse_aux(*f, "Ntrials");
    if (!spec.E.empty() && spec.family != FamilyKind::poisson)
        throw ValidationError("E", "expected counts are only allowed with the poisson family");
    if (!spec.Ntrials.empty() && spec.family != FamilyKind::binomial)
        throw ValidationError("Ntrials", "only allowed with the binomial family");
    if (spec.family == FamilyKind::binomial && spec.Ntrials.empty())
        throw ValidationError("Ntrials", "required for the binomial family");
    if (auto f = doc.find("safe"); f != doc.end()) spec.safe = as_bool(*f, "safe");

    if (auto r = doc.find("random"); r != doc.end()) {
        if (!r->is_array()) throw ValidationError("random", "expected a list of components");
        std::set<std::string> ids;
        for (std::size_t k = 0; k < r->size(); ++k) {
            const std::string p = "random[" + std::to_string(k) + "]";
            const json& e = (*r)[k];
            check_keys(e, p,
                       {"id", "model", "hyper", "constr", "scale.model", "scale_model", "cyclic", "graph", "Cmatrix",
                        "Q", "A.local", "A_local", "n"});
            RandomComponent c;
            auto id = e.find("id");
            if (id == e.end()) throw ValidationError(sub(p, "id"), "required key missing");
            c.id = as_string(*id, sub(p, "id"));
            if (!ids.insert(c.id).second) throw ValidationError(sub(p, "id"), "duplicate component id '" + c.id + "'");
            auto model = e.find("model");
            if (model == e.end()) throw ValidationError(sub(p, "model"), "required key missing");
            c.model = parse_latent_name(as_string(*model, sub(p, "model")), sub(p, "model"));
            if (auto v = e.find("constr"); v != e.end()) c.constr = as_bool(*v, sub(p, "constr"));
            if (auto v = find_alias(e, p, {"scale.model", "scale_model"})) c.scale_model = as_bool(*v, sub(p, "scale.model"));
            if (auto v = e.find("cyclic"); v != e.end()) c.cyclic = as_bool(*v, sub(p, "cyclic"));
            if (c.cyclic && c.model != LatentKind::rw1 && c.model != LatentKind::rw2)
                throw ValidationError(sub(p, "cyclic"), "cyclic is only valid for rw1 and rw2");
            if (auto v = e.find("graph"); v != e.end()) c.graph = resolve_path(as_string(*v, sub(p, "graph")), base_dir);
            const bool spatial = c.model == LatentKind::bym || c.model == LatentKind::bym2;
            if (spatial && c.graph.empty()) throw ValidationError(sub(p, "graph"), "required for model bym/bym2");
            if (!spatial && !c.graph.empty()) throw ValidationError(sub(p, "graph"), "only used by bym/bym2");
            if (auto v = find_alias(e, p, {"Cmatrix", "Q"})) c.Q = parse_matrix(*v, sub(p, "Cmatrix"), base_dir);
            if (c.model == LatentKind::generic0) {
                if (!c.Q) throw ValidationError(sub(p, "Cmatrix"), "required for model generic0");
                if (c.Q->nrow != c.Q->ncol) throw ValidationError(sub(p, "Cmatrix"), "matrix must be square");
            } else if (c.Q) {
                throw ValidationError(sub(p, "Cmatrix"), "only used by generic0");
            }
            if (auto v = find_alias(e, p, {"A.local", "A_local"})) c.A_local = parse_matrix(*v, sub(p, "A.local"), base_dir);
            if (auto v = e.find("n"); v != e.end()) {
                c.n = as_int(*v, sub(p, "n"));
                if (*c.n < 1) throw ValidationError(sub(p, "n"), "must be positive");
            }
            const auto slots = hyper_slots(c.model);
            const LatentKind kind = c.model;
            const json* hyper = nullptr;
            if (auto h = e.find("hyper"); h != e.end()) hyper = &*h;
            c.hyper = parse_hyper_block(
                hyper, sub(p, "hyper"), slots,
                [kind](const std::string& name, const std::string& kp) { return canonical_slot(kind, name, kp); },
                [kind](const std::string& s) { return default_prior(kind, s); },
                [kind](const std::string& s) { return slot_transform(kind, s); });
            spec.random.push_back(std::move(c));
        }
    }

    if (auto ctl = doc.find("control"); ctl != doc.end()) {
        check_keys(*ctl, "control", {"compute", "fixed", "family", "inla"});
        auto& co = spec.control;
        if (auto v = ctl->find("compute"); v != ctl->end()) {
            check_keys(*v, "control.compute",
                       {"dic", "waic", "cpo", "config", "return_marginals", "return.marginals", "mlik"});
            auto flag = [&](const char* key, bool& dst) {
                if (auto f = v->find(key); f != v->end()) dst = as_bool(*f, std::string("control.compute.") + key);
            };
            flag("dic", co.compute.dic);
            flag("waic", co.compute.waic);
            flag("cpo", co.compute.cpo);
            flag("config", co.compute.config);
            if (auto f = find_alias(*v, "control.compute", {"return_marginals", "return.marginals"}))
                co.compute.return_marginals = as_bool(*f, "control.compute.return_marginals");
            if (auto f = v->find("mlik"); f != v->end()) as_bool(*f, "control.compute.mlik");  // always computed
        }
        if (auto v = ctl->find("fixed"); v != ctl->end()) {
            check_keys(*v, "control.fixed", {"prec", "prec.intercept", "prec_intercept"});
            if (auto f = v->find("prec"); f != v->end()) co.fixed_prec = as_number(*f, "control.fixed.prec");
            if (auto f = find_alias(*v, "control.fixed", {"prec.intercept", "prec_intercept"}))
                co.fixed_prec_intercept = as_number(*f, "control.fixed.prec.intercept");
            if (!(co.fixed_prec > 0)) throw ValidationError("control.fixed.prec", "must be positive");
            if (!(co.fixed_prec_intercept > 0)) throw ValidationError("control.fixed.prec.intercept", "must be positive");
        }
        if (auto v = ctl->find("inla"); v != ctl->end()) {
            check_keys(*v, "control.inla", {"dz", "diff.logdens", "diff_logdens"});
            if (auto f = v->find("dz"); f != v->end()) co.dz = as_number(*f, "control.inla.dz");
            if (auto f = find_alias(*v, "control.inla", {"diff.logdens", "diff_logdens"}))
                co.diff_logdens = as_number(*f, "control.inla.diff.logdens");
            if (!(co.dz > 0)) throw ValidationError("control.inla.dz", "must be positive");
            if (!(co.diff_logdens > 0)) throw ValidationError("control.inla.diff.logdens", "must be positive");
        }
        if (auto v = ctl->find("family"); v != ctl->end()) {
            check_keys(*v, "control.family", {"hyper"});
            if (auto h = v->find("hyper"); h != v->end()) {
                const std::string slot = family_hyper_slot(spec.family);
                if (slot.empty() && !h->empty())
                    throw ValidationError("control.family.hyper", std::string(family_name(spec.family)) + " has no hyperparameters");
                const FamilyKind fam = spec.family;
                co.family_hyper = parse_hyper_block(
                    &*h, "control.family.hyper", {slot},
                    [slot](const std::string& name, const std::string& kp) {
                        if (name == slot || name == "theta" || name == "theta1") return slot;
                        throw ValidationError(kp, "unknown likelihood hyperparameter '" + name + "'");
                    },
                    [fam](const std::string&) { return default_family_prior(fam); },
                    [fam](const std::string&) { return family_slot_transform(fam); });
            }
        }
    }
    if (const std::string slot = family_hyper_slot(spec.family); !slot.empty() && spec.control.family_hyper.empty())
        spec.control.family_hyper[slot] = default_family_prior(spec.family);
    return spec;
}

ModelSpec load_model_spec(const std::string& path) {
    const std::string dir = fs::absolute(fs::path(path)).parent_path().string();
    return parse_model_spec(read_file(path, "model file"), dir);
}

std::string serialize_model_spec(const ModelSpec& spec) {
    json doc;
    doc["response"] = spec.response;
    doc["fixed"] = spec.fixed;
    doc["family"] = family_name(spec.family);
    if (!spec.E.empty()) doc["E"] = aux_to_json(spec.E);
    if (!spec.Ntrials.empty()) doc["Ntrials"] = aux_to_json(spec.Ntrials);
    doc["safe"] = spec.safe;
    json random = json::array();
    for (const auto& c : spec.random) {
        json e;
        e["id"] = c.id;
        e["model"] = latent_name(c.model);
        e["constr"] = c.constr;
        e["scale.model"] = c.scale_model;
        e["cyclic"] = c.cyclic;
        if (!c.graph.empty()) e["graph"] = c.graph;
        if (c.Q) e["Cmatrix"] = matrix_to_json(*c.Q);
        if (c.A_local) e["A.local"] = matrix_to_json(*c.A_local);
        if (c.n) e["n"] = *c.n;
        json h = json::object();
        for (const auto& [slot, p] : c.hyper) h[slot] = prior_to_json(p);
        e["hyper"] = h;
        random.push_back(e);
    }
    doc["random"] = random;
    const auto& co = spec.control;
    json ctl;
    ctl["compute"] = {{"dic", co.compute.dic},
                      {"waic", co.compute.waic},
                      {"cpo", co.compute.cpo},
                      {"config", co.compute.config},
                      {"return_marginals", co.compute.return_marginals}};
    ctl["fixed"] = {{"prec", co.fixed_prec}, {"prec.intercept", co.fixed_prec_intercept}};
    ctl["inla"] = {{"dz", co.dz}, {"diff.logdens", co.diff_logdens}};
    if (!co.family_hyper.empty()) {
        json h = json::object();
        for (const auto& [slot, p] : co.family_hyper) h[slot] = prior_to_json(p);
        ctl["family"] = {{"hyper", h}};
    }
    doc["control"] = ctl;
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// matrices

MatrixInput read_matrix_triplets(const std::string& path, int nrow, int ncol) {
    const auto rows = parse_csv(read_file(path, "matrix file"));
    MatrixInput m;
    m.path = path;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::string where = path + ":" + std::to_string(r + 1);
        double vals[3];
        const bool numeric = row.size() == 3 && parse_number(row[0], vals[0]) && parse_number(row[1], vals[1]) &&
                             parse_number(row[2], vals[2]);
        if (!numeric) {
            if (r == 0) continue;  // header
            throw ValidationError(where, "expected i,j,x");
        }
        const int i = static_cast<int>(vals[0]), j = static_cast<int>(vals[1]);
        if (i != vals[0] || j != vals[1] || i < 1 || j < 1) throw ValidationError(where, "indices must be positive integers");
        m.entries.emplace_back(i - 1, j - 1, vals[2]);
        m.nrow = std::max(m.nrow, i);
        m.ncol = std::max(m.ncol, j);
    }
    if (nrow) {
        if (m.nrow > nrow) throw ValidationError(path, "row index exceeds nrow");
        m.nrow = nrow;
    }
    if (ncol) {
        if (m.ncol > ncol) throw ValidationError(path, "column index exceeds ncol");
        m.ncol = ncol;
    }
    return m;
}

SpMat to_sparse(const MatrixInput& m) {
    std::vector<Triplet> t;
    t.reserve(m.entries.size());
    for (const auto& [r, c, v] : m.entries) t.emplace_back(r, c, v);
    SpMat s(m.nrow, m.ncol);
    s.setFromTriplets(t.begin(), t.end());
    s.makeCompressed();
    return s;
}

SparseSym to_sparse_sym(const MatrixInput& m) {
    if (m.nrow != m.ncol) throw ValidationError(m.path, "precision matrix must be square");
    const SpMat full = to_sparse(m);
    const SpMat diff = full - SpMat(full.transpose());
    for (int k = 0; k < diff.outerSize(); ++k)
        for (SpMat::InnerIterator it(diff, k); it; ++it)
            if (std::abs(it.value()) > 1e-10 * (1.0 + std::abs(full.coeff(it.row(), it.col()))))
                throw ValidationError(m.path, "precision matrix is not symmetric");
    std::vector<Triplet> lower;
    for (int k = 0; k < full.outerSize(); ++k)
        for (SpMat::InnerIterator it(full, k); it; ++it)
            if (it.row() >= it.col()) lower.emplace_back(it.row(), it.col(), it.value());
    return SparseSym::from_triplets(m.nrow, lower);
}

// ---------------------------------------------------------------------------
// layout and design

std::pair<int, int> LatentLayout::range(const std::string& name) const {
    for (int k = 0; k < beta_length; ++k)
        if (beta_names[k] == name) return {beta_offset + k, 1};
    for (const auto& b : blocks)
        if (b.name == name) return {b.offset, b.length};
    if (name == "x" || name == "beta") return {beta_offset, beta_length};
    return {-1, 0};
}

std::string fixed_term_name(const std::string& term) { return term == "1" ? "(Intercept)" : term; }

int component_levels(const RandomComponent& c, const DataTable& data) {
    if (c.n) return *c.n;
    if (c.model == LatentKind::bym || c.model == LatentKind::bym2) return read_graph(c.graph).n;
    if (c.Q) return c.Q->nrow;
    if (c.A_local) return c.A_local->ncol;
    const auto& ids = data.numeric(c.id);
    double mx = 0;
    for (double v : ids) mx = std::max(mx, v);
    return static_cast<int>(mx);
}

void validate_against_data(const ModelSpec& spec, const DataTable& data) {
    const DataColumn* resp = data.find(spec.response);
    if (!resp) throw ValidationError("response", "column '" + spec.response + "' not in data");
    if (!resp->numeric) throw ValidationError("response", "column '" + spec.response + "' is not numeric");
    for (std::size_t k = 0; k < spec.fixed.size(); ++k) {
        const auto& t = spec.fixed[k];
        if (t == "1") continue;
        const DataColumn* c = data.find(t);
        const std::string p = "fixed[" + std::to_string(k) + "]";
        if (!c) throw ValidationError(p, "column '" + t + "' not in data");
        if (!c->numeric) throw ValidationError(p, "column '" + t + "' is not numeric");
    }
    for (std::size_t k = 0; k < spec.random.size(); ++k) {
        const auto& c = spec.random[k];
        const std::string p = "random[" + std::to_string(k) + "].id";
        if (c.A_local) continue;
        const DataColumn* col = data.find(c.id);
        if (!col) throw ValidationError(p, "column '" + c.id + "' not in data");
        if (!col->numeric) throw ValidationError(p, "index column '" + c.id + "' is not numeric");
        for (int r = 0; r < data.n_rows(); ++r) {
            const double v = col->values[r];
            if (!(v >= 1.0) || std::floor(v) != v)
                throw ValidationError(p, "row " + std::to_string(r + 1) + ": index must be an integer >= 1 (1-based)");
        }
    }
    auto check_aux = [&](const AuxInput& a, const char* key, bool integer) {
        if (a.empty()) return;
        const std::vector<double>& v = a.column.empty() ? a.values : data.numeric(a.column);
        if (static_cast<int>(v.size()) != data.n_rows())
            throw ValidationError(key, "length " + std::to_string(v.size()) + " differs from the number of rows");
        for (double x : v)
            if (!(x > 0.0) || (integer && std::floor(x) != x))
                throw ValidationError(key, integer ? "values must be positive integers" : "values must be positive");
    };
    check_aux(spec.E, "E", false);
    check_aux(spec.Ntrials, "Ntrials", true);
}

std::pair<LatentLayout, DesignMatrices> build_layout_and_design(const ModelSpec& spec, const DataTable& data) {
    validate_against_data(spec, data);
    const int n_obs = data.n_rows();
    LatentLayout layout;
    DesignMatrices design;
    layout.beta_offset = 0;
    layout.beta_length = static_cast<int>(spec.fixed.size());
    design.X = Matrix::Zero(n_obs, layout.beta_length);
    for (int k = 0; k < layout.beta_length; ++k) {
        const auto& t = spec.fixed[k];
        layout.beta_names.push_back(fixed_term_name(t));
        if (t == "1") {
            design.X.col(k).setOnes();
        } else {
            const auto& v = data.numeric(t);
            for (int r = 0; r < n_obs; ++r) design.X(r, k) = v[r];
        }
    }
    int offset = layout.beta_length;
    std::vector<Triplet> a;
    for (int r = 0; r < n_obs; ++r)
        for (int k = 0; k < layout.beta_length; ++k) a.emplace_back(r, k, design.X(r, k));
    for (std::size_t k = 0; k < spec.random.size(); ++k) {
        const auto& c = spec.random[k];
        const std::string p = "random[" + std::to_string(k) + "]";
        LatentBlock b;
        b.name = c.id;
        b.kind = c.model;
        b.m = component_levels(c, data);
        if (b.m < 1) throw ValidationError(p, "component has no levels");
        b.length = c.model == LatentKind::bym || c.model == LatentKind::bym2 ? 2 * b.m : b.m;
        b.offset = offset;
        if (c.Q && c.Q->nrow != b.m) throw ValidationError(sub(p, "Cmatrix"), "size differs from the component size");
        SpMat comp;
        if (c.A_local) {
            if (c.A_local->ncol != b.m)
                throw ValidationError(sub(p, "A.local"), "has " + std::to_string(c.A_local->ncol) + " columns, component size is " +
                                                             std::to_string(b.m));
            if (c.A_local->nrow != n_obs)
                throw ValidationError(sub(p, "A.local"), "has " + std::to_string(c.A_local->nrow) + " rows, data has " +
                                                             std::to_string(n_obs));
            comp = to_sparse(*c.A_local);
        } else {
            const auto& ids = data.numeric(c.id);
            std::vector<Triplet> t;
            for (int r = 0; r < n_obs; ++r) {
                const int id = static_cast<int>(ids[r]);
                if (id > b.m)
                    throw ValidationError(sub(p, "id"), "row " + std::to_string(r + 1) + ": index " + std::to_string(id) +
                                                            " exceeds component size " + std::to_string(b.m));
                t.emplace_back(r, id - 1, 1.0);
            }
            comp = SpMat(n_obs, b.m);
            comp.setFromTriplets(t.begin(), t.end());
        }
        for (int col = 0; col < comp.outerSize(); ++col)
            for (SpMat::InnerIterator it(comp, col); it; ++it) a.emplace_back(it.row(), offset + col, it.value());
        design.component.push_back(std::move(comp));
        layout.blocks.push_back(b);
        offset += b.length;
    }
    layout.n = offset;
    design.A = SpMat(n_obs, layout.n);
    design.A.setFromTriplets(a.begin(), a.end());
    design.A.makeCompressed();
    return {std::move(layout), std::move(design)};
}

}  // namespace lgm
