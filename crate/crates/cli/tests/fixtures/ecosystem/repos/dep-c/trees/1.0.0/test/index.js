const f = require('..');
require('assert').strictEqual(f(3), 3);
