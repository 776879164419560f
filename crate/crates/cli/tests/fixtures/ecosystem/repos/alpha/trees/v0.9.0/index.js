module.exports = { math: require('./lib/math'), str: require('./lib/str') };
