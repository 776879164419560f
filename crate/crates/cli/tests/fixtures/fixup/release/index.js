module.exports = require('./lib/util');
