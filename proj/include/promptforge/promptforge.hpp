#ifndef PROMPTFORGE_PROMPTFORGE_HPP_INCLUDED
#define PROMPTFORGE_PROMPTFORGE_HPP_INCLUDED

// Everything except the live HTTP backend and the CLI commands, which pull in
// cpp-httplib.

#include "backend.hpp"
#include "codecs.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "io.hpp"
#include "pipelines.hpp"
#include "prompting.hpp"
#include "retrieval.hpp"
#include "strategies.hpp"
#include "templates.hpp"
#include "text.hpp"
#include "vote.hpp"

#endif // PROMPTFORGE_PROMPTFORGE_HPP_INCLUDED
