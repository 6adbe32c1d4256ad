#include "hca/wire/render.hpp"

#include <sstream>

namespace hca::wire {

namespace {

void render(const SchemaPtr& s, const WireValue& v, std::ostream& out) {
    switch (s->kind) {
        case Kind::FixedUint:
        case Kind::VarInteger:
            out << v.as_integer();
            return;
        case Kind::RawData:
            out << "0x" << to_hex(v.as_raw());
            return;
        case Kind::String: {
            out << '"';
            for (char ch : v.as_text()) {
                if (ch == '"' || ch == '\\') out << '\\';
                out << ch;
            }
            out << '"';
            return;
        }
        case Kind::Boolean:
            out << (v.as_boolean() ? "true" : "false");
            return;
        case Kind::Record: {
            out << '{';
            for (size_t i = 0; i < s->fields.size(); ++i) {
                if (i) out << ", ";
                if (!s->fields[i].name.empty()) out << s->fields[i].name << '=';
                render(s->fields[i].schema, v.field(i), out);
            }
            out << '}';
            return;
        }
        case Kind::Union: {
            const UnionValue& u = v.as_union();
            const auto& var = s->variants.at(u.index);
            out << (var.name.empty() ? "case" + std::to_string(u.index) : var.name);
            if (u.payload) {
                out << '(';
                render(var.schema, *u.payload, out);
                out << ')';
            }
            return;
        }
        case Kind::List: {
            out << '[';
            const ValueList& elems = v.items();
            for (size_t i = 0; i < elems.size(); ++i) {
                if (i) out << ", ";
                render(s->element, elems[i], out);
            }
            out << ']';
            return;
        }
        case Kind::Signed: {
            const SignedValue& sv = v.as_signed();
            out << "signed(";
            render(s->inner, *sv.inner, out);
            out << ", sig=0x" << to_hex(sv.signature) << ')';
            return;
        }
        case Kind::Encrypted:
            out << "encrypted(0x" << to_hex(v.as_encrypted().blob) << ')';
            return;
        case Kind::Authenticated: {
            const AuthValue& a = v.as_auth();
            out << "authenticated(method=\"" << a.method << "\", key=0x" << to_hex(a.key)
                << ", ";
            render(s->inner, *a.inner, out);
            out << ", sig=0x" << to_hex(a.signature) << ')';
            return;
        }
    }
}

}  // namespace

std::string render_value(const SchemaPtr& schema, const WireValue& value) {
    std::ostringstream out;
    render(schema, value, out);
    return out.str();
}

}  // namespace hca::wire
