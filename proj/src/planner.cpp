#include "kloak/planner.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>

#include "kloak/errors.hpp"

namespace kloak {

std::string_view to_string(CompareOp op) {
  switch (op) {
    case CompareOp::Eq:
      return "=";
    case CompareOp::Ne:
      return "<>";
    case CompareOp::Lt:
      return "<";
    case CompareOp::Le:
      return "<=";
    case CompareOp::Gt:
      return ">";
    case CompareOp::Ge:
      return ">=";
    case CompareOp::In:
      return "IN";
  }
  return "=";
}

std::string_view to_string(AggFn fn) {
  switch (fn) {
    case AggFn::Count:
      return "count";
    case AggFn::Sum:
      return "sum";
    case AggFn::Avg:
      return "avg";
    case AggFn::Min:
      return "min";
    case AggFn::Max:
      return "max";
  }
  return "count";
}

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Scan:
      return "Scan";
    case NodeKind::Filter:
      return "Filter";
    case NodeKind::Join:
      return "Join";
    case NodeKind::Aggregate:
      return "Aggregate";
    case NodeKind::Project:
      return "Project";
    case NodeKind::Sort:
      return "Sort";
    case NodeKind::Limit:
      return "Limit";
  }
  return "Scan";
}

std::string_view to_string(Placement placement) {
  switch (placement) {
    case Placement::Unassigned:
      return "unassigned";
    case Placement::Plain:
      return "plain";
    case Placement::Secure:
      return "secure";
    case Placement::Client:
      return "client";
  }
  return "unassigned";
}

bool Predicate::matches(const Scalar& value) const {
  switch (op) {
    case CompareOp::Eq:
      return value == literals.front();
    case CompareOp::Ne:
      return value != literals.front();
    case CompareOp::Lt:
      return value < literals.front();
    case CompareOp::Le:
      return value <= literals.front();
    case CompareOp::Gt:
      return value > literals.front();
    case CompareOp::Ge:
      return value >= literals.front();
    case CompareOp::In:
      return std::find(literals.begin(), literals.end(), value) != literals.end();
  }
  return false;
}

std::vector<ColumnRef> PlanNode::control_inputs() const {
  std::vector<ColumnRef> inputs;
  switch (kind) {
    case NodeKind::Filter:
      for (const auto& predicate : predicates) inputs.push_back(predicate.column);
      break;
    case NodeKind::Join:
      for (const auto& key : join_keys) {
        inputs.push_back(key.left);
        inputs.push_back(key.right);
      }
      break;
    case NodeKind::Aggregate:
      inputs = group_by;
      if (entity) inputs.push_back(*entity);
      break;
    default:
      break;
  }
  std::sort(inputs.begin(), inputs.end());
  inputs.erase(std::unique(inputs.begin(), inputs.end()), inputs.end());
  return inputs;
}

std::optional<int> QueryPlan::parent_of(int id) const {
  for (const auto& candidate : nodes) {
    if (std::find(candidate.children.begin(), candidate.children.end(), id) != candidate.children.end()) {
      return candidate.id;
    }
  }
  return std::nullopt;
}

int QueryPlan::engine_root() const {
  int current = root;
  while (node(current).kind == NodeKind::Sort || node(current).kind == NodeKind::Limit) {
    current = node(current).children.front();
  }
  return current;
}

const PlanNode* QueryPlan::aggregate_node() const {
  for (const auto& candidate : nodes) {
    if (candidate.kind == NodeKind::Aggregate) return &candidate;
  }
  return nullptr;
}

std::vector<int> QueryPlan::scan_ids() const {
  std::vector<int> ids;
  for (const auto& candidate : nodes) {
    if (candidate.kind == NodeKind::Scan) ids.push_back(candidate.id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class TokenType { Identifier, Number, String, Symbol, End };

struct Token {
  TokenType type = TokenType::End;
  std::string text;
  std::size_t position = 0;
};

std::string upper(std::string_view text) {
  std::string result(text);
  for (auto& c : result) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return result;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const auto start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) ++i;
      tokens.push_back({TokenType::Identifier, std::string(text.substr(start, i - start)), start});
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '-' && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      ++i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      if (i < text.size() && text[i] == '.') throw UnsupportedFeature("decimal literals are not supported");
      tokens.push_back({TokenType::Number, std::string(text.substr(start, i - start)), start});
    } else if (c == '\'') {
      std::string value;
      ++i;
      bool closed = false;
      while (i < text.size()) {
        if (text[i] == '\'') {
          if (i + 1 < text.size() && text[i + 1] == '\'') {
            value.push_back('\'');
            i += 2;
            continue;
          }
          closed = true;
          ++i;
          break;
        }
        value.push_back(text[i++]);
      }
      if (!closed) throw ParseError("unterminated string literal", start);
      tokens.push_back({TokenType::String, value, start});
    } else {
      static const char* const two_char[] = {"<>", "<=", ">=", "!="};
      bool matched = false;
      for (const auto* symbol : two_char) {
        if (text.substr(i, 2) == symbol) {
          tokens.push_back({TokenType::Symbol, symbol == std::string_view("!=") ? "<>" : symbol, start});
          i += 2;
          matched = true;
          break;
        }
      }
      if (matched) continue;
      if (std::string_view(",().*=<>;").find(c) == std::string_view::npos) {
        throw ParseError(std::string("unexpected character '") + c + "'", start);
      }
      tokens.push_back({TokenType::Symbol, std::string(1, c), start});
      ++i;
    }
  }
  tokens.push_back({TokenType::End, "", text.size()});
  return tokens;
}

// ---------------------------------------------------------------------------
// Parser producing unresolved syntax, resolved against the catalog afterwards.

struct RawColumn {
  std::string qualifier;
  std::string name;
  std::size_t position = 0;
};

struct RawSelectItem {
  bool is_aggregate = false;
  AggFn fn = AggFn::Count;
  bool star_argument = false;
  RawColumn column;
  std::string alias;
  std::size_t position = 0;
};

struct RawConjunct {
  RawColumn column;
  CompareOp op = CompareOp::Eq;
  std::vector<Token> literals;
  std::optional<RawColumn> other;  // attr = attr
};

struct RawFrom {
  std::string relation;
  std::string alias;
  std::size_t position = 0;
};

struct RawQuery {
  bool star = false;
  std::vector<RawSelectItem> items;
  std::vector<RawFrom> from;
  std::vector<RawConjunct> where;
  std::vector<RawColumn> group_by;
  std::vector<std::pair<RawColumn, bool>> order_by;
  std::optional<int64_t> limit;
};

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = {"SELECT", "FROM",  "WHERE",    "GROUP", "BY",    "ORDER",  "LIMIT",
                                              "AND",    "OR",    "NOT",      "IN",    "AS",    "ASC",    "DESC",
                                              "JOIN",   "ON",    "HAVING",   "UNION", "LIKE",  "BETWEEN", "IS",
                                              "EXISTS", "INNER", "DISTINCT", "LEFT",  "RIGHT", "OUTER",  "CASE"};
  return words;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(tokenize(text)) {}

  RawQuery parse() {
    RawQuery query;
    expect_keyword("SELECT");
    if (peek_keyword("DISTINCT")) throw UnsupportedFeature("DISTINCT is not supported");
    parse_select_list(query);
    expect_keyword("FROM");
    parse_from(query);
    if (accept_keyword("WHERE")) parse_where(query);
    if (accept_keyword("GROUP")) {
      expect_keyword("BY");
      do {
        query.group_by.push_back(parse_column());
      } while (accept_symbol(","));
    }
    if (peek_keyword("HAVING")) throw UnsupportedFeature("HAVING is not supported");
    if (accept_keyword("ORDER")) {
      expect_keyword("BY");
      do {
        auto column = parse_column();
        bool descending = false;
        if (accept_keyword("DESC")) {
          descending = true;
        } else {
          accept_keyword("ASC");
        }
        query.order_by.emplace_back(std::move(column), descending);
      } while (accept_symbol(","));
    }
    if (accept_keyword("LIMIT")) {
      const auto& token = current();
      if (token.type != TokenType::Number) throw ParseError("expected LIMIT count", token.position);
      query.limit = std::stoll(token.text);
      if (*query.limit < 0) throw ParseError("LIMIT must be non-negative", token.position);
      advance();
    }
    accept_symbol(";");
    if (current().type != TokenType::End) {
      check_unsupported(current());
      throw ParseError("unexpected token '" + current().text + "'", current().position);
    }
    return query;
  }

 private:
  const Token& current() const { return tokens_[index_]; }
  const Token& lookahead(std::size_t offset) const { return tokens_[std::min(index_ + offset, tokens_.size() - 1)]; }
  void advance() {
    if (index_ + 1 < tokens_.size()) ++index_;
  }

  bool peek_keyword(std::string_view keyword) const {
    return current().type == TokenType::Identifier && upper(current().text) == keyword;
  }
  bool accept_keyword(std::string_view keyword) {
    if (!peek_keyword(keyword)) return false;
    advance();
    return true;
  }
  void expect_keyword(std::string_view keyword) {
    if (!accept_keyword(keyword)) {
      check_unsupported(current());
      throw ParseError("expected " + std::string(keyword), current().position);
    }
  }
  bool accept_symbol(std::string_view symbol) {
    if (current().type == TokenType::Symbol && current().text == symbol) {
      advance();
      return true;
    }
    return false;
  }
  void expect_symbol(std::string_view symbol) {
    if (!accept_symbol(symbol)) {
      throw ParseError("expected '" + std::string(symbol) + "'", current().position);
    }
  }

  static void check_unsupported(const Token& token) {
    if (token.type != TokenType::Identifier) return;
    const auto word = upper(token.text);
    static const std::set<std::string> unsupported = {"OR",    "NOT",  "JOIN",    "HAVING", "UNION",
                                                      "LIKE",  "IS",   "BETWEEN", "EXISTS", "INNER",
                                                      "LEFT",  "RIGHT", "OUTER",  "CASE",   "ON"};
    if (unsupported.count(word)) throw UnsupportedFeature(word + " is not supported");
  }

  std::string parse_identifier(const char* what) {
    const auto& token = current();
    if (token.type != TokenType::Identifier || reserved_words().count(upper(token.text))) {
      check_unsupported(token);
      throw ParseError(std::string("expected ") + what, token.position);
    }
    auto text = token.text;
    advance();
    return text;
  }

  RawColumn parse_column() {
    RawColumn column;
    column.position = current().position;
    auto first = parse_identifier("column name");
    if (accept_symbol(".")) {
      column.qualifier = std::move(first);
      column.name = parse_identifier("column name");
    } else {
      column.name = std::move(first);
    }
    return column;
  }

  void parse_select_list(RawQuery& query) {
    if (accept_symbol("*")) {
      query.star = true;
      return;
    }
    do {
      RawSelectItem item;
      item.position = current().position;
      static const std::map<std::string, AggFn> functions = {
          {"COUNT", AggFn::Count}, {"SUM", AggFn::Sum}, {"AVG", AggFn::Avg}, {"MIN", AggFn::Min}, {"MAX", AggFn::Max}};
      const auto fn = current().type == TokenType::Identifier ? functions.find(upper(current().text))
                                                               : functions.end();
      if (fn != functions.end() && lookahead(1).type == TokenType::Symbol && lookahead(1).text == "(") {
        item.is_aggregate = true;
        item.fn = fn->second;
        advance();
        expect_symbol("(");
        if (peek_keyword("DISTINCT")) throw UnsupportedFeature("DISTINCT aggregates are not supported");
        if (accept_symbol("*")) {
          if (item.fn != AggFn::Count) throw ParseError("only COUNT accepts *", item.position);
          item.star_argument = true;
        } else {
          if (current().type == TokenType::Symbol && current().text == "(") {
            throw UnsupportedFeature("expressions inside aggregates are not supported");
          }
          item.column = parse_column();
        }
        expect_symbol(")");
      } else {
        item.column = parse_column();
      }
      if (accept_keyword("AS")) {
        item.alias = parse_identifier("alias");
      } else if (current().type == TokenType::Identifier && !reserved_words().count(upper(current().text))) {
        item.alias = parse_identifier("alias");
      }
      query.items.push_back(std::move(item));
    } while (accept_symbol(","));
  }

  void parse_from(RawQuery& query) {
    do {
      if (current().type == TokenType::Symbol && current().text == "(") {
        throw UnsupportedFeature("subqueries are not supported");
      }
      RawFrom from;
      from.position = current().position;
      from.relation = parse_identifier("relation name");
      if (accept_keyword("AS")) {
        from.alias = parse_identifier("alias");
      } else if (current().type == TokenType::Identifier && !reserved_words().count(upper(current().text))) {
        from.alias = parse_identifier("alias");
      }
      query.from.push_back(std::move(from));
    } while (accept_symbol(","));
    check_unsupported(current());
  }

  Token parse_literal() {
    const auto token = current();
    if (token.type != TokenType::Number && token.type != TokenType::String) {
      if (token.type == TokenType::Symbol && token.text == "(") {
        throw UnsupportedFeature("subqueries are not supported");
      }
      throw ParseError("expected literal", token.position);
    }
    advance();
    return token;
  }

  void parse_where(RawQuery& query) {
    do {
      if (peek_keyword("NOT")) throw UnsupportedFeature("NOT is not supported");
      if (peek_keyword("EXISTS")) throw UnsupportedFeature("subqueries are not supported");
      if (current().type == TokenType::Symbol && current().text == "(") {
        throw UnsupportedFeature("parenthesized predicates are not supported");
      }
      RawConjunct conjunct;
      conjunct.column = parse_column();
      if (accept_keyword("IN")) {
        conjunct.op = CompareOp::In;
        expect_symbol("(");
        if (peek_keyword("SELECT")) throw UnsupportedFeature("subqueries are not supported");
        do {
          conjunct.literals.push_back(parse_literal());
        } while (accept_symbol(","));
        expect_symbol(")");
      } else {
        check_unsupported(current());
        const auto& token = current();
        static const std::map<std::string, CompareOp> ops = {{"=", CompareOp::Eq},  {"<>", CompareOp::Ne},
                                                             {"<", CompareOp::Lt},  {"<=", CompareOp::Le},
                                                             {">", CompareOp::Gt},  {">=", CompareOp::Ge}};
        const auto op = token.type == TokenType::Symbol ? ops.find(token.text) : ops.end();
        if (op == ops.end()) throw ParseError("expected comparison operator", token.position);
        conjunct.op = op->second;
        advance();
        if (current().type == TokenType::Identifier) {
          if (conjunct.op != CompareOp::Eq) {
            throw UnsupportedFeature("only equality comparisons between columns are supported");
          }
          conjunct.other = parse_column();
        } else {
          conjunct.literals.push_back(parse_literal());
        }
      }
      query.where.push_back(std::move(conjunct));
      if (peek_keyword("OR")) throw UnsupportedFeature("OR is not supported");
    } while (accept_keyword("AND"));
  }

  std::vector<Token> tokens_;
  std::size_t index_ = 0;
};

// ---------------------------------------------------------------------------
// Resolution and plan construction

class Resolver {
 public:
  Resolver(const Catalog& catalog, const std::vector<RawFrom>& from) : catalog_(catalog) {
    for (const auto& entry : from) {
      const auto* relation = catalog.find(entry.relation);
      if (!relation) throw UnknownAttribute("unknown relation '" + entry.relation + "'");
      if (std::find(relations_.begin(), relations_.end(), entry.relation) != relations_.end()) {
        throw UnsupportedFeature("self-joins are not supported ('" + entry.relation + "' listed twice)");
      }
      relations_.push_back(entry.relation);
      names_[entry.relation] = entry.relation;
      if (!entry.alias.empty()) names_[entry.alias] = entry.relation;
    }
  }

  const std::vector<std::string>& relations() const { return relations_; }

  ColumnRef resolve(const RawColumn& column) const {
    if (!column.qualifier.empty()) {
      const auto it = names_.find(column.qualifier);
      if (it == names_.end()) {
        throw UnknownAttribute("unknown relation or alias '" + column.qualifier + "' at offset " +
                               std::to_string(column.position));
      }
      catalog_.relation(it->second).index_of(column.name);
      return {it->second, column.name};
    }
    std::vector<std::string> owners;
    for (const auto& relation : relations_) {
      if (catalog_.relation(relation).find(column.name)) owners.push_back(relation);
    }
    if (owners.empty()) {
      throw UnknownAttribute("unknown attribute '" + column.name + "' at offset " + std::to_string(column.position));
    }
    if (owners.size() > 1) throw ParseError("ambiguous attribute '" + column.name + "'", column.position);
    return {owners.front(), column.name};
  }

  ScalarKind kind_of(const ColumnRef& column) const { return catalog_.attribute(column.relation, column.attr).kind; }

 private:
  const Catalog& catalog_;
  std::vector<std::string> relations_;
  std::map<std::string, std::string> names_;
};

Scalar literal_value(const Token& token, ScalarKind kind, const ColumnRef& column) {
  if (token.type == TokenType::String) {
    if (kind != ScalarKind::Text) {
      throw TypeError("text literal '" + token.text + "' compared with " + std::string(to_string(kind)) +
                      " attribute " + column.qualified());
    }
    return token.text;
  }
  if (kind == ScalarKind::Text) {
    throw TypeError("numeric literal " + token.text + " compared with text attribute " + column.qualified());
  }
  return parse_scalar(token.text, kind);
}

std::string render_call(AggFn fn, const std::optional<ColumnRef>& target) {
  return std::string(to_string(fn)) + "(" + (target ? target->attr : std::string("*")) + ")";
}

}  // namespace

QueryPlan parse_query(std::string_view text, const Catalog& catalog) {
  const auto raw = Parser(text).parse();
  const Resolver resolver(catalog, raw.from);

  QueryPlan plan;
  plan.text = std::string(text);
  plan.relations = resolver.relations();
  plan.select_star = raw.star;

  auto add_node = [&plan](PlanNode node) {
    node.id = static_cast<int>(plan.nodes.size());
    plan.nodes.push_back(std::move(node));
    return plan.nodes.back().id;
  };

  std::map<std::string, int> top;
  for (const auto& relation : plan.relations) {
    PlanNode scan;
    scan.kind = NodeKind::Scan;
    scan.relation = relation;
    top[relation] = add_node(std::move(scan));
  }

  // Local predicates, one Filter per relation, and join conjuncts.
  std::map<std::string, std::vector<Predicate>> local;
  std::vector<JoinKey> join_conjuncts;
  for (const auto& conjunct : raw.where) {
    const auto column = resolver.resolve(conjunct.column);
    if (conjunct.other) {
      const auto other = resolver.resolve(*conjunct.other);
      if (other.relation == column.relation) {
        throw UnsupportedFeature("comparisons between columns of one relation are not supported");
      }
      if (catalog.attribute(column.relation, column.attr).domain != catalog.attribute(other.relation, other.attr).domain) {
        throw DomainMismatch("join columns " + column.qualified() + " and " + other.qualified() +
                             " are not in one domain");
      }
      join_conjuncts.push_back({column, other});
      continue;
    }
    Predicate predicate;
    predicate.column = column;
    predicate.op = conjunct.op;
    for (const auto& literal : conjunct.literals) {
      predicate.literals.push_back(literal_value(literal, resolver.kind_of(column), column));
    }
    local[column.relation].push_back(std::move(predicate));
  }
  for (const auto& relation : plan.relations) {
    auto it = local.find(relation);
    if (it == local.end()) continue;
    PlanNode filter;
    filter.kind = NodeKind::Filter;
    filter.children = {top[relation]};
    filter.predicates = std::move(it->second);
    top[relation] = add_node(std::move(filter));
  }

  // Left-deep joins in FROM order, each step taking the first relation that
  // connects to the joined set.
  std::set<std::string> joined = {plan.relations.front()};
  int current = top[plan.relations.front()];
  std::vector<std::string> remaining(plan.relations.begin() + 1, plan.relations.end());
  while (!remaining.empty()) {
    bool progressed = false;
    for (auto it = remaining.begin(); it != remaining.end(); ++it) {
      std::vector<JoinKey> keys;
      for (const auto& conjunct : join_conjuncts) {
        if (joined.count(conjunct.left.relation) && conjunct.right.relation == *it) {
          keys.push_back(conjunct);
        } else if (joined.count(conjunct.right.relation) && conjunct.left.relation == *it) {
          keys.push_back({conjunct.right, conjunct.left});
        }
      }
      if (keys.empty()) continue;
      PlanNode join;
      join.kind = NodeKind::Join;
      join.children = {current, top[*it]};
      join.join_keys = std::move(keys);
      current = add_node(std::move(join));
      joined.insert(*it);
      remaining.erase(it);
      progressed = true;
      break;
    }
    if (!progressed) throw UnsupportedFeature("cross products (relations without a join predicate)");
  }

  std::vector<ColumnRef> group_by;
  for (const auto& column : raw.group_by) group_by.push_back(resolver.resolve(column));
  const bool has_aggregate =
      !group_by.empty() || std::any_of(raw.items.begin(), raw.items.end(), [](const auto& i) { return i.is_aggregate; });

  if (has_aggregate) {
    if (raw.star) throw UnsupportedFeature("SELECT * with aggregation");
    PlanNode aggregate;
    aggregate.kind = NodeKind::Aggregate;
    aggregate.children = {current};
    aggregate.group_by = group_by;
    const auto& first = catalog.relation(plan.relations.front());
    aggregate.entity = ColumnRef{first.name, first.entity_attr};
    for (const auto& item : raw.items) {
      if (item.is_aggregate) {
        AggCall call;
        call.fn = item.fn;
        if (!item.star_argument) call.target = resolver.resolve(item.column);
        if (call.target && (call.fn == AggFn::Sum || call.fn == AggFn::Avg) &&
            resolver.kind_of(*call.target) == ScalarKind::Text) {
          throw TypeError(std::string(to_string(call.fn)) + " over text attribute " + call.target->qualified());
        }
        call.name = item.alias.empty() ? render_call(call.fn, call.target) : item.alias;
        plan.select.push_back({call.name, aggregate.aggregates.size()});
        aggregate.aggregates.push_back(std::move(call));
      } else {
        const auto column = resolver.resolve(item.column);
        if (std::find(group_by.begin(), group_by.end(), column) == group_by.end()) {
          throw ParseError("column '" + column.qualified() + "' must appear in GROUP BY", item.position);
        }
        plan.select.push_back({item.alias.empty() ? column.attr : item.alias, column});
      }
    }
    current = add_node(std::move(aggregate));
  } else if (!raw.star) {
    PlanNode project;
    project.kind = NodeKind::Project;
    project.children = {current};
    for (const auto& item : raw.items) {
      const auto column = resolver.resolve(item.column);
      project.projection.push_back(column);
      plan.select.push_back({item.alias.empty() ? column.attr : item.alias, column});
    }
    current = add_node(std::move(project));
  } else {
    for (const auto& relation : plan.relations) {
      for (const auto& attribute : catalog.relation(relation).attributes) {
        plan.select.push_back({attribute.name, ColumnRef{relation, attribute.name}});
      }
    }
  }

  if (!raw.order_by.empty()) {
    PlanNode sort;
    sort.kind = NodeKind::Sort;
    sort.children = {current};
    for (const auto& [column, descending] : raw.order_by) {
      std::optional<std::string> name;
      for (const auto& item : plan.select) {
        if (column.qualifier.empty() && item.name == column.name) {
          name = item.name;
          break;
        }
      }
      if (!name) {
        const auto resolved = resolver.resolve(column);
        for (const auto& item : plan.select) {
          const auto* ref = std::get_if<ColumnRef>(&item.source);
          if (ref && *ref == resolved) {
            name = item.name;
            break;
          }
        }
        if (!name) throw UnsupportedFeature("ORDER BY on a column that is not selected: " + resolved.qualified());
      }
      sort.sort_keys.push_back({*name, descending});
    }
    current = add_node(std::move(sort));
  }
  if (raw.limit) {
    PlanNode limit;
    limit.kind = NodeKind::Limit;
    limit.children = {current};
    limit.limit = *raw.limit;
    current = add_node(std::move(limit));
  }
  plan.root = current;
  return plan;
}

// ---------------------------------------------------------------------------
// Control flow and modes

std::vector<std::string> ControlFlowSet::for_relation(const RelationDef& relation) const {
  std::vector<std::string> attrs;
  for (const auto& attribute : relation.attributes) {
    if (contains({relation.name, attribute.name})) attrs.push_back(attribute.name);
  }
  return attrs;
}

std::set<std::string> ControlFlowSet::relations() const {
  std::set<std::string> result;
  for (const auto& entry : entries_) result.insert(entry.relation);
  return result;
}

bool ControlFlowSet::is_subset_of(const ControlFlowSet& other) const {
  return std::includes(other.entries_.begin(), other.entries_.end(), entries_.begin(), entries_.end());
}

bool ControlFlowSet::is_disjoint_from(const ControlFlowSet& other) const {
  return std::none_of(entries_.begin(), entries_.end(), [&](const auto& entry) { return other.contains(entry); });
}

ControlFlowSet ControlFlowSet::united(const ControlFlowSet& other) const {
  auto result = *this;
  for (const auto& entry : other.entries_) result.insert(entry);
  return result;
}

std::vector<std::string> ControlFlowSet::to_strings() const {
  std::vector<std::string> result;
  for (const auto& entry : entries_) result.push_back(entry.qualified());
  return result;
}

ControlFlowSet ControlFlowSet::parse(const std::vector<std::string>& entries, const Catalog& catalog) {
  ControlFlowSet result;
  for (const auto& entry : entries) {
    const auto dot = entry.find('.');
    if (dot == std::string::npos) throw UnknownAttribute("control-flow entry '" + entry + "' must be rel.attr");
    ColumnRef column{entry.substr(0, dot), entry.substr(dot + 1)};
    catalog.attribute(column.relation, column.attr);
    result.insert(column);
  }
  return result;
}

ControlFlowSet derive_control_flow(const QueryPlan& plan, const Catalog& catalog) {
  ControlFlowSet c;
  std::vector<bool> tainted(plan.nodes.size(), false);
  auto mark = [&](const PlanNode& node, bool& changed) {
    if (!tainted[node.id]) {
      tainted[node.id] = true;
      changed = true;
    }
    for (const auto& column : node.control_inputs()) {
      if (!c.contains(column)) {
        c.insert(column);
        changed = true;
      }
    }
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& node : plan.nodes) {
      if (node.kind == NodeKind::Sort || node.kind == NodeKind::Limit) continue;
      bool taint = tainted[node.id];
      for (const auto child : node.children) taint = taint || tainted[child];
      for (const auto& column : node.control_inputs()) {
        taint = taint || catalog.attribute(column.relation, column.attr).policy == Policy::KAnon || c.contains(column);
      }
      if (taint) mark(node, changed);
    }
    // Joins beneath a tainted node move anonymized classes, so their keys
    // are control flow too.
    std::vector<bool> under_taint(plan.nodes.size(), false);
    for (auto it = plan.nodes.rbegin(); it != plan.nodes.rend(); ++it) {
      for (const auto child : it->children) {
        under_taint[child] = under_taint[child] || under_taint[it->id] || tainted[it->id];
      }
      if (it->kind == NodeKind::Join && under_taint[it->id]) mark(*it, changed);
    }
  }
  return c;
}

QueryPlan assign_modes(QueryPlan plan, const ControlFlowSet& c) {
  for (auto& node : plan.nodes) {
    if (node.kind == NodeKind::Scan) {
      node.placement = Placement::Plain;
      continue;
    }
    if (node.kind == NodeKind::Sort || node.kind == NodeKind::Limit) {
      node.placement = Placement::Client;
      continue;
    }
    bool secure = false;
    for (const auto& column : node.control_inputs()) secure = secure || c.contains(column);
    for (const auto child : node.children) secure = secure || plan.nodes[child].placement == Placement::Secure;
    node.placement = secure ? Placement::Secure : Placement::Plain;
  }
  return plan;
}

bool secure_frontier_is_upward_closed(const QueryPlan& plan) {
  for (const auto& node : plan.nodes) {
    if (node.placement != Placement::Secure) continue;
    auto parent = plan.parent_of(node.id);
    if (parent && plan.node(*parent).placement == Placement::Plain) return false;
  }
  return true;
}

std::string_view AdmissionDecision::name() const {
  switch (value.index()) {
    case 0:
      return "reuse";
    case 1:
      return "merge";
    case 2:
      return "augment";
    default:
      return "oblivious";
  }
}

AdmissionDecision admit(const ControlFlowSet& c_q, int k_q, const WorkloadState& state) {
  if (k_q < 1) throw ValidationError("k must be at least 1");
  if (c_q.is_subset_of(state.c_system)) {
    if (k_q <= state.k_system) return {AdmissionDecision::ReuseView{}};
    return {AdmissionDecision::MergeClasses{k_q}};
  }
  if (c_q.is_disjoint_from(state.c_system)) return {AdmissionDecision::AugmentView{state.c_system.united(c_q)}};
  return {AdmissionDecision::ObliviousFallback{}};
}

std::vector<std::string> required_columns(const QueryPlan& plan, const Catalog& catalog, const std::string& relation) {
  std::set<std::string> needed;
  auto note = [&](const ColumnRef& column) {
    if (column.relation == relation) needed.insert(column.attr);
  };
  // Local-chain filters only need their columns before the frontier.
  for (const auto& node : plan.nodes) {
    const bool local_filter = node.kind == NodeKind::Filter && node.placement == Placement::Plain;
    if (!local_filter) {
      for (const auto& predicate : node.predicates) note(predicate.column);
    }
    for (const auto& key : node.join_keys) {
      note(key.left);
      note(key.right);
    }
    for (const auto& column : node.group_by) note(column);
    for (const auto& call : node.aggregates) {
      if (call.target) note(*call.target);
    }
    if (node.entity) note(*node.entity);
    for (const auto& column : node.projection) note(column);
  }
  for (const auto& item : plan.select) {
    if (const auto* column = std::get_if<ColumnRef>(&item.source)) note(*column);
  }
  std::vector<std::string> ordered;
  for (const auto& attribute : catalog.relation(relation).attributes) {
    if (needed.count(attribute.name)) ordered.push_back(attribute.name);
  }
  return ordered;
}

}  // namespace kloak
