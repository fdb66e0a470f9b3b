#include "gridse/network.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <set>
#include <sstream>

#include "gridse/csvio.hpp"

namespace gridse {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Tokenizer {
  std::istringstream in;
  explicit Tokenizer(const std::string& line) : in(line) {}
  bool next_int(int& v) { return static_cast<bool>(in >> v); }
  bool next_double(double& v) { return static_cast<bool>(in >> v); }
  bool done() {
    std::string rest;
    return !(in >> rest);
  }
};

[[noreturn]] void fail(int lineno, const std::string& what) {
  throw CaseError("case file line " + std::to_string(lineno) + ": " + what);
}

}  // namespace

int NetworkCase::index_of(int bus_id) const {
  auto it = index_by_id_.find(bus_id);
  if (it == index_by_id_.end())
    throw CaseError("unknown bus id " + std::to_string(bus_id));
  return it->second;
}

void NetworkCase::reindex() {
  index_by_id_.clear();
  for (int i = 0; i < n_buses(); ++i) {
    auto [it, inserted] = index_by_id_.emplace(buses[i].id, i);
    if (!inserted)
      throw CaseError("duplicate bus id " + std::to_string(buses[i].id));
  }
}

void NetworkCase::validate() const {
  if (base_mva <= 0) throw CaseError("base_mva must be positive");
  if (buses.empty()) throw CaseError("case has no buses");
  if (static_cast<int>(index_by_id_.size()) != n_buses())
    throw CaseError("bus index out of date; call reindex()");
  if (!has_bus(slack_bus))
    throw CaseError("slack bus " + std::to_string(slack_bus) + " not in BUS section");
  for (const Bus& b : buses) {
    if (b.v_true <= 0)
      throw CaseError("bus " + std::to_string(b.id) + ": v_true must be positive");
  }
  for (const Branch& br : branches) {
    if (!has_bus(br.from))
      throw CaseError("branch references unknown bus " + std::to_string(br.from));
    if (!has_bus(br.to))
      throw CaseError("branch references unknown bus " + std::to_string(br.to));
    if (br.r == 0.0 && br.x == 0.0)
      throw CaseError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                      ": zero series impedance");
    if (br.tap_ratio <= 0)
      throw CaseError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                      ": tap_ratio must be positive");
  }
  // connectivity: BFS over the branch graph from the slack
  std::vector<std::vector<int>> adj(n_buses());
  for (const Branch& br : branches) {
    int f = index_of(br.from), t = index_of(br.to);
    adj[f].push_back(t);
    adj[t].push_back(f);
  }
  std::vector<char> seen(n_buses(), 0);
  std::queue<int> q;
  q.push(slack_index());
  seen[slack_index()] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  if (count != n_buses()) {
    for (int i = 0; i < n_buses(); ++i)
      if (!seen[i])
        throw CaseError("network is not connected: bus " + std::to_string(buses[i].id) +
                        " unreachable from the slack");
  }
}

NetworkCase parse_case(const std::string& text) {
  NetworkCase nc;
  enum class Section { none, meta, bus, branch } section = Section::none;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_base = false, have_slack = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("#SECTION", 0) == 0) {
      std::istringstream hs(line);
      std::string tag, name;
      hs >> tag >> name;
      if (name == "META")
        section = Section::meta;
      else if (name == "BUS")
        section = Section::bus;
      else if (name == "BRANCH")
        section = Section::branch;
      else
        fail(lineno, "unknown section '" + name + "'");
      continue;
    }
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    switch (section) {
      case Section::none:
        fail(lineno, "data before any #SECTION header");
      case Section::meta: {
        std::istringstream ms(line);
        std::string key;
        ms >> key;
        if (key == "base_mva") {
          if (!(ms >> nc.base_mva)) fail(lineno, "base_mva needs a number");
          have_base = true;
        } else if (key == "slack") {
          if (!(ms >> nc.slack_bus)) fail(lineno, "slack needs a bus id");
          have_slack = true;
        } else {
          fail(lineno, "unknown META key '" + key + "'");
        }
        break;
      }
      case Section::bus: {
        Tokenizer t(line);
        Bus b;
        double theta_deg;
        if (!t.next_int(b.id) || !t.next_double(b.v_true) || !t.next_double(theta_deg) ||
            !t.next_double(b.shunt_g) || !t.next_double(b.shunt_b) || !t.done())
          fail(lineno, "BUS row needs: id v_true theta_true_deg shunt_g shunt_b");
        b.theta_true = theta_deg * kDegToRad;
        nc.buses.push_back(b);
        break;
      }
      case Section::branch: {
        Tokenizer t(line);
        Branch br;
        double shift_deg;
        if (!t.next_int(br.from) || !t.next_int(br.to) || !t.next_double(br.r) ||
            !t.next_double(br.x) || !t.next_double(br.b_charging) ||
            !t.next_double(br.tap_ratio) || !t.next_double(shift_deg) || !t.done())
          fail(lineno, "BRANCH row needs: from to r x b_charging tap_ratio tap_shift_deg");
        br.tap_shift = shift_deg * kDegToRad;
        nc.branches.push_back(br);
        break;
      }
    }
  }
  if (!have_base) throw CaseError("META section missing base_mva");
  if (!have_slack) throw CaseError("META section missing slack");
  nc.reindex();
  nc.validate();
  return nc;
}

std::string serialize_case(const NetworkCase& nc) {
  std::ostringstream out;
  out << "#SECTION META\n";
  out << "base_mva " << format_double(nc.base_mva) << "\n";
  out << "slack " << nc.slack_bus << "\n";
  out << "#SECTION BUS\n";
  out << "# id v_true theta_true_deg shunt_g shunt_b\n";
  for (const Bus& b : nc.buses) {
    out << b.id << ' ' << format_double(b.v_true) << ' '
        << format_double(b.theta_true / kDegToRad) << ' ' << format_double(b.shunt_g)
        << ' ' << format_double(b.shunt_b) << "\n";
  }
  out << "#SECTION BRANCH\n";
  out << "# from to r x b_charging tap_ratio tap_shift_deg\n";
  for (const Branch& br : nc.branches) {
    out << br.from << ' ' << br.to << ' ' << format_double(br.r) << ' '
        << format_double(br.x) << ' ' << format_double(br.b_charging) << ' '
        << format_double(br.tap_ratio) << ' ' << format_double(br.tap_shift / kDegToRad)
        << "\n";
  }
  return out.str();
}

NetworkCase load_case(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaseError("cannot open case file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

int AreaPartition::area(int bus_id) const {
  auto it = area_of_bus.find(bus_id);
  if (it == area_of_bus.end())
    throw CaseError("bus " + std::to_string(bus_id) + " has no area assignment");
  return it->second;
}

AreaPartition parse_partition(const std::string& text, const NetworkCase& nc) {
  AreaPartition p;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    int bus, area;
    std::string rest;
    if (!(ls >> bus >> area) || (ls >> rest))
      throw CaseError("partition line " + std::to_string(lineno) + ": expected 'bus_id area_id'");
    if (!nc.has_bus(bus))
      throw CaseError("partition line " + std::to_string(lineno) + ": unknown bus " +
                      std::to_string(bus));
    if (!p.area_of_bus.emplace(bus, area).second)
      throw CaseError("partition line " + std::to_string(lineno) + ": bus " +
                      std::to_string(bus) + " assigned twice");
  }
  for (const Bus& b : nc.buses)
    if (!p.area_of_bus.count(b.id))
      throw CaseError("partition leaves bus " + std::to_string(b.id) + " unassigned");
  std::set<int> ids;
  for (const auto& [bus, area] : p.area_of_bus) ids.insert(area);
  p.area_ids.assign(ids.begin(), ids.end());
  return p;
}

AreaPartition load_partition(const std::string& path, const NetworkCase& nc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaseError("cannot open partition file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_partition(ss.str(), nc);
}

AreaPartition single_area(const NetworkCase& nc) {
  AreaPartition p;
  for (const Bus& b : nc.buses) p.area_of_bus[b.id] = 1;
  p.area_ids = {1};
  return p;
}

AdmittanceModel build_admittance(const NetworkCase& nc) {
  const int n = nc.n_buses();
  AdmittanceModel m;
  m.branch.reserve(nc.branches.size());
  std::vector<Eigen::Triplet<std::complex<double>>> trip;
  trip.reserve(4 * nc.branches.size() + n);
  for (const Branch& br : nc.branches) {
    std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    std::complex<double> half_b(0.0, br.b_charging / 2.0);
    double a = br.tap_ratio;
    std::complex<double> shift = std::polar(1.0, br.tap_shift);
    BranchAdmittance ba;
    ba.yff = (ys + half_b) / (a * a);
    ba.ytt = ys + half_b;
    ba.yft = -ys / (a * std::conj(shift));
    ba.ytf = -ys / (a * shift);
    m.branch.push_back(ba);
    int f = nc.index_of(br.from), t = nc.index_of(br.to);
    trip.emplace_back(f, f, ba.yff);
    trip.emplace_back(t, t, ba.ytt);
    trip.emplace_back(f, t, ba.yft);
    trip.emplace_back(t, f, ba.ytf);
  }
  for (int i = 0; i < n; ++i) {
    const Bus& b = nc.buses[i];
    if (b.shunt_g != 0.0 || b.shunt_b != 0.0)
      trip.emplace_back(i, i, std::complex<double>(b.shunt_g, b.shunt_b));
  }
  m.Y.resize(n, n);
  m.Y.setFromTriplets(trip.begin(), trip.end());
  m.Y.makeCompressed();
  return m;
}

}  // namespace gridse
