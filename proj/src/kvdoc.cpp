#include "vmbpo/kvdoc.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace vmbpo {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_real(const std::string& key, const std::string& tok) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse real from '" + tok + "'");
  }
}

long parse_int(const std::string& key, const std::string& tok) {
  try {
    std::size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse integer from '" + tok + "'");
  }
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

KeyValueDoc KeyValueDoc::parse_string(const std::string& text) {
  KeyValueDoc doc;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    doc.entries_[key] = value;
  }
  return doc;
}

KeyValueDoc KeyValueDoc::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config document: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

std::vector<std::string> KeyValueDoc::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const std::string& KeyValueDoc::raw(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing required key '" + key + "'");
  return it->second;
}

std::string KeyValueDoc::get_string(const std::string& key) const { return raw(key); }

std::string KeyValueDoc::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? entries_.at(key) : fallback;
}

double KeyValueDoc::get_real(const std::string& key) const { return parse_real(key, raw(key)); }

double KeyValueDoc::get_real(const std::string& key, double fallback) const {
  return has(key) ? parse_real(key, entries_.at(key)) : fallback;
}

long KeyValueDoc::get_int(const std::string& key) const { return parse_int(key, raw(key)); }

long KeyValueDoc::get_int(const std::string& key, long fallback) const {
  return has(key) ? parse_int(key, entries_.at(key)) : fallback;
}

bool KeyValueDoc::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = entries_.at(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<double> KeyValueDoc::get_reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& tok : tokens(raw(key))) out.push_back(parse_real(key, tok));
  return out;
}

std::vector<long> KeyValueDoc::get_ints(const std::string& key) const {
  std::vector<long> out;
  for (const auto& tok : tokens(raw(key))) out.push_back(parse_int(key, tok));
  return out;
}

std::vector<std::string> KeyValueDoc::get_strings(const std::string& key) const {
  return tokens(raw(key));
}

void KeyValueDoc::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

void KeyValueDoc::set_real(const std::string& key, double value) {
  entries_[key] = format_real(value);
}

void KeyValueDoc::set_int(const std::string& key, long value) {
  entries_[key] = std::to_string(value);
}

void KeyValueDoc::set_reals(const std::string& key, std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += format_real(values[i]);
  }
  entries_[key] = out;
}

void KeyValueDoc::set_strings(const std::string& key, const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += values[i];
  }
  entries_[key] = out;
}

std::string KeyValueDoc::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void KeyValueDoc::write_file(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write document: " + path);
  out << serialize();
}

FiniteMdp mdp_from_doc(const KeyValueDoc& doc) {
  FiniteMdp m;
  m.states = doc.get_strings("states");
  m.actions = doc.get_strings("actions");
  const int nx = m.num_states();
  const int na = m.num_actions();
  if (nx == 0 || na == 0) throw ConfigError("mdp document needs states and actions");

  auto terminals = doc.get_strings("terminals");
  m.terminal.assign(nx, false);
  for (const auto& name : terminals) {
    int x = m.state_index(name);
    if (x < 0) throw ConfigError("terminal '" + name + "' is not a state");
    m.terminal[x] = true;
  }

  auto reward = doc.get_reals("reward");
  if (static_cast<int>(reward.size()) != nx * na)
    throw ConfigError("reward table must hold " + std::to_string(nx * na) + " reals");
  m.reward.assign(nx, std::vector<double>(na, 0.0));
  for (int x = 0; x < nx; ++x)
    for (int a = 0; a < na; ++a) m.reward[x][a] = reward[x * na + a];

  auto transition = doc.get_reals("transition");
  if (static_cast<int>(transition.size()) != nx * na * nx)
    throw ConfigError("transition table must hold " + std::to_string(nx * na * nx) + " reals");
  m.transition.assign(nx, std::vector<std::vector<double>>(na, std::vector<double>(nx, 0.0)));
  for (int x = 0; x < nx; ++x)
    for (int a = 0; a < na; ++a)
      for (int y = 0; y < nx; ++y) m.transition[x][a][y] = transition[(x * na + a) * nx + y];

  m.initial = doc.get_reals("initial");
  if (static_cast<int>(m.initial.size()) != nx)
    throw ConfigError("initial distribution must hold " + std::to_string(nx) + " reals");
  return m;
}

KeyValueDoc mdp_to_doc(const FiniteMdp& m) {
  KeyValueDoc doc;
  doc.set_strings("states", m.states);
  doc.set_strings("actions", m.actions);
  std::vector<std::string> terminals;
  for (int x = 0; x < m.num_states(); ++x)
    if (m.terminal[x]) terminals.push_back(m.states[x]);
  doc.set_strings("terminals", terminals);

  std::vector<double> reward;
  for (const auto& row : m.reward) reward.insert(reward.end(), row.begin(), row.end());
  doc.set_reals("reward", reward);

  std::vector<double> transition;
  for (const auto& xrow : m.transition)
    for (const auto& arow : xrow) transition.insert(transition.end(), arow.begin(), arow.end());
  doc.set_reals("transition", transition);
  doc.set_reals("initial", m.initial);
  return doc;
}

FiniteMdp load_mdp(const std::string& path) { return mdp_from_doc(KeyValueDoc::parse_file(path)); }

void save_mdp(const std::string& path, const FiniteMdp& mdp) { mdp_to_doc(mdp).write_file(path); }

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), out_(path, std::ios::trunc | std::ios::binary), columns_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write csv: " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out_ << ',';
    out_ << header[i];
  }
  out_ << '\n';
  out_.flush();
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_)
    throw std::invalid_argument("csv row arity mismatch");
  if (!out_) throw std::runtime_error("csv stream closed: " + path_);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
  out_.flush();
}

void CsvWriter::close() {
  if (out_.is_open()) out_.close();
}

}  // namespace vmbpo
